use std::ffi::{CStr, CString};
use std::ptr;

use subnet_tda::model::{self, Example, LanguageId, ModelConfig, SubnetworkMask};
use subnet_tda_ffi::*;

fn micro_json() -> CString {
    CString::new(serde_json::to_string(&ModelConfig::micro()).unwrap()).unwrap()
}

fn new_model(seed: u64) -> *mut SiModel {
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { si_model_init(micro_json().as_ptr(), seed, &mut m) }, SiStatus::SiOk);
    m
}

fn full_mask(m: *const SiModel) -> *mut SiMask {
    let mut k = ptr::null_mut();
    assert_eq!(unsafe { si_mask_full(m, &mut k) }, SiStatus::SiOk);
    k
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(si_last_error()) }.to_string_lossy().into_owned()
}

const TOKENS: [u32; 6] = [0, 5, 6, 1, 7, 8];

#[test]
fn forward_and_gradients_match_the_library() {
    let m = new_model(3);
    let k = full_mask(m);
    let cfg = ModelConfig::micro();
    let params = model::init_model(&cfg, 3).unwrap();
    let mask = SubnetworkMask::full_for(&cfg);
    let ex = Example { id: 0, tokens: TOKENS.to_vec(), label: 1, language: LanguageId(0), latent_id: 0 };

    let mut probs = vec![0.0; cfg.num_classes];
    let s = unsafe { si_forward(m, k, TOKENS.as_ptr(), TOKENS.len(), probs.as_mut_ptr(), probs.len()) };
    assert_eq!(s, SiStatus::SiOk);
    assert_eq!(probs, model::forward(&params, &ex, &mask).unwrap());

    let (mut n, mut layers, mut heads, mut classes) = (0usize, 0usize, 0usize, 0usize);
    assert_eq!(unsafe { si_model_shape(m, &mut n, &mut layers, &mut heads, &mut classes) }, SiStatus::SiOk);
    assert_eq!((n, layers, heads, classes), (params.len(), cfg.num_layers, cfg.heads_per_layer, cfg.num_classes));

    let mut grad = vec![0.0; n];
    let mut loss = 0.0;
    let s = unsafe { si_loss_and_grad(m, k, TOKENS.as_ptr(), TOKENS.len(), 1, grad.as_mut_ptr(), n, &mut loss) };
    assert_eq!(s, SiStatus::SiOk);
    let g = model::loss_and_grad(&params, &ex, &mask).unwrap();
    assert_eq!(grad, g.values);
    assert_eq!(loss, g.loss);

    let mut gates = vec![0.0; layers * heads];
    let s = unsafe { si_gate_grad(m, k, TOKENS.as_ptr(), TOKENS.len(), 1, gates.as_mut_ptr(), gates.len()) };
    assert_eq!(s, SiStatus::SiOk);
    assert_eq!(gates, model::gate_grad(&params, &ex, &mask).unwrap().values);

    unsafe {
        si_mask_free(k);
        si_model_free(m);
    }
}

#[test]
fn short_output_buffer_is_rejected() {
    let m = new_model(1);
    let k = full_mask(m);
    let mut probs = [0.0; 1];
    let s = unsafe { si_forward(m, k, TOKENS.as_ptr(), TOKENS.len(), probs.as_mut_ptr(), 1) };
    assert_eq!(s, SiStatus::SiErrBufferSize);
    assert!(last_error().contains("required"));
    unsafe {
        si_mask_free(k);
        si_model_free(m);
    }
}

#[test]
fn out_of_vocabulary_tokens_are_rejected() {
    let m = new_model(1);
    let k = full_mask(m);
    let bad = [0u32, 9999, 7];
    let mut probs = [0.0; 4];
    let s = unsafe { si_forward(m, k, bad.as_ptr(), bad.len(), probs.as_mut_ptr(), probs.len()) };
    assert_ne!(s, SiStatus::SiOk);
    assert!(!last_error().is_empty());
    unsafe {
        si_mask_free(k);
        si_model_free(m);
    }
}

#[test]
fn mask_cosine_and_undefined_case() {
    let a = CString::new(SubnetworkMask::from_bits(2, 2, vec![true, true, false, true]).unwrap().to_json()).unwrap();
    let b = CString::new(SubnetworkMask::from_bits(2, 2, vec![true, false, false, true]).unwrap().to_json()).unwrap();
    let z = CString::new(SubnetworkMask::zeros(2, 2).to_json()).unwrap();
    let (mut ma, mut mb, mut mz) = (ptr::null_mut(), ptr::null_mut(), ptr::null_mut());
    unsafe {
        assert_eq!(si_mask_load_json(a.as_ptr(), &mut ma), SiStatus::SiOk);
        assert_eq!(si_mask_load_json(b.as_ptr(), &mut mb), SiStatus::SiOk);
        assert_eq!(si_mask_load_json(z.as_ptr(), &mut mz), SiStatus::SiOk);
    }
    let mut c = 0.0;
    assert_eq!(unsafe { si_mask_cosine(ma, mb, -1, &mut c) }, SiStatus::SiOk);
    assert!((c - 2.0 / 6f64.sqrt()).abs() < 1e-12);
    assert_eq!(unsafe { si_mask_cosine(ma, mb, 0, &mut c) }, SiStatus::SiOk);
    assert!((c - 1.0 / 2f64.sqrt()).abs() < 1e-12);
    assert_eq!(unsafe { si_mask_cosine(ma, mz, -1, &mut c) }, SiStatus::SiErrUndefined);
    let bad = CString::new("{not json").unwrap();
    let mut mx = ptr::null_mut();
    assert_eq!(unsafe { si_mask_load_json(bad.as_ptr(), &mut mx) }, SiStatus::SiErrFormat);
    unsafe {
        si_mask_free(ma);
        si_mask_free(mb);
        si_mask_free(mz);
    }
}

#[test]
fn tracin_self_score_equals_checkpoint_count() {
    let u = [1.0, 2.0, -1.0, 0.5, 0.0, 3.0];
    let mut s = 0.0;
    assert_eq!(unsafe { si_tracin_score(u.as_ptr(), u.as_ptr(), 2, 3, true, &mut s) }, SiStatus::SiOk);
    assert!((s - 2.0).abs() < 1e-12);
    assert_eq!(unsafe { si_tracin_score(u.as_ptr(), u.as_ptr(), 2, 3, false, &mut s) }, SiStatus::SiOk);
    assert!((s - (6.0 + 9.25)).abs() < 1e-12);
}

#[test]
fn checkpoint_files_load() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("epoch_1.bin");
    model::init_model(&ModelConfig::micro(), 9).unwrap().save(&path).unwrap();
    let c = CString::new(path.to_str().unwrap()).unwrap();
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { si_model_load(c.as_ptr(), &mut m) }, SiStatus::SiOk);
    unsafe { si_model_free(m) };
    let missing = CString::new(dir.path().join("nope.bin").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { si_model_load(missing.as_ptr(), &mut m) }, SiStatus::SiErrIo);
}

#[test]
fn null_arguments_are_reported() {
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { si_model_init(ptr::null(), 0, &mut m) }, SiStatus::SiErrNullPointer);
    assert_eq!(unsafe { si_model_init(micro_json().as_ptr(), 0, ptr::null_mut()) }, SiStatus::SiErrNullPointer);
    unsafe {
        si_model_free(ptr::null_mut());
        si_mask_free(ptr::null_mut());
    }
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/subnet_tda.h")).unwrap();
    for f in [
        "si_last_error",
        "si_model_load",
        "si_model_init",
        "si_model_free",
        "si_model_shape",
        "si_mask_load_json",
        "si_mask_full",
        "si_mask_free",
        "si_forward",
        "si_loss_and_grad",
        "si_gate_grad",
        "si_mask_cosine",
        "si_tracin_score",
    ] {
        assert!(header.contains(&format!("{f}(")), "{f} missing from header");
    }
    assert!(header.contains("typedef struct SiModel SiModel"));
}
