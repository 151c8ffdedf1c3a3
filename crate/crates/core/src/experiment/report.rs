//! Figure-analog tables computed from the rankings of every variant.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::time::Instant;

use serde::Serialize;

use crate::analysis::{
    contribution_matrix, delta_matrix, epoch_trajectory, mask_cosine, pearson, specialization,
    write_square, write_table, ContributionMatrix, CorrelationResult, DeltaMatrix, EpochTrajectory, Sign,
    SimilarityMatrix,
};
use crate::error::{Error, Result};
use crate::influence::InfluenceRanking;

use super::pipeline::{restrict, Pipeline};
use super::variant::Variant;

pub const FIGURE_DIRS: [&str; 7] =
    ["fig2_delta", "fig6_random_sft", "fig7_corr", "fig8_sim_corr", "fig9_layerwise", "fig10_epochs", "appF_compose"];

/// Contribution matrices of one variant and its deltas against the full
/// model restricted to the same test examples.
#[derive(Debug, Clone, Serialize)]
pub struct VariantAnalysis {
    pub variant: String,
    pub eligible: usize,
    pub positive: ContributionMatrix,
    pub negative: ContributionMatrix,
    pub delta_positive: DeltaMatrix,
    pub delta_negative: DeltaMatrix,
}

/// A correlation, or why it could not be computed.
#[derive(Debug, Clone, Serialize)]
pub struct Correlation {
    pub r: Option<f64>,
    pub n: usize,
    pub note: Option<String>,
}

impl Correlation {
    fn from(x: &[f64], y: &[f64]) -> Self {
        match pearson(x, y) {
            Ok(CorrelationResult { r, n, .. }) => Correlation { r: Some(r), n, note: None },
            Err(e @ (Error::UndefinedCorrelation(_) | Error::Contract(_))) => {
                Correlation { r: None, n: x.len(), note: Some(e.to_string()) }
            }
            Err(e) => Correlation { r: None, n: x.len(), note: Some(e.to_string()) },
        }
    }
}

/// Headline numbers of a run.
#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub languages: Vec<String>,
    /// Positive subnetwork-minus-full delta on the diagonal, per language.
    pub subnet_diagonal: Vec<f64>,
    pub subnet_mean_diagonal: f64,
    /// Mean diagonal delta of each shuffled-mask seed.
    pub random_mean_diagonal: BTreeMap<u64, f64>,
    pub random_mean_diagonal_overall: Option<f64>,
    pub sft_mean_specialization: Option<f64>,
    pub sft_random_mean_specialization: Option<f64>,
    pub sft_mean_dev_accuracy: Option<f64>,
    pub sft_random_mean_dev_accuracy: Option<f64>,
    pub full_mean_dev_accuracy: f64,
    pub specialization_vs_accuracy: Correlation,
    pub similarity_vs_influence: Correlation,
    pub heads_kept: Vec<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub summary: Summary,
    pub variants: BTreeMap<String, VariantAnalysis>,
    /// Final per-language dev accuracy per trained model.
    pub dev_accuracy: BTreeMap<String, Vec<f64>>,
    pub similarity: SimilarityMatrix,
    pub layerwise: Vec<Correlation>,
    pub trajectories: BTreeMap<String, EpochTrajectory>,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn diagonal(d: &DeltaMatrix) -> Vec<f64> {
    (0..d.languages.len()).map(|i| d.values[i][i]).collect()
}

#[derive(Serialize)]
struct Meta<'a> {
    config: &'a str,
    variant: &'a str,
    sign: Option<Sign>,
    m: usize,
    eligible: Option<usize>,
    note: &'a str,
}

impl Pipeline {
    fn matrices(&self, variant: &str, rankings: &[InfluenceRanking]) -> Result<(ContributionMatrix, ContributionMatrix)> {
        let (test_lang, train_lang) = self.language_maps()?;
        let names = self.languages();
        Ok((
            contribution_matrix(rankings, &test_lang, &train_lang, &names, Sign::Positive, variant)?,
            contribution_matrix(rankings, &test_lang, &train_lang, &names, Sign::Negative, variant)?,
        ))
    }

    fn analyse_variant(&self, variant: &Variant) -> Result<VariantAnalysis> {
        let full = self.rankings(&Variant::Full)?;
        let own = self.rankings(variant)?;
        let ids: BTreeSet<u64> = own.eligible.iter().copied().collect();
        let name = variant.to_string();
        let (positive, negative) = self.matrices(&name, &own.summed)?;
        let (base_pos, base_neg) = self.matrices("full", &restrict(&full.summed, &ids))?;
        Ok(VariantAnalysis {
            variant: name,
            eligible: ids.len(),
            delta_positive: delta_matrix(&positive, &base_pos)?,
            delta_negative: delta_matrix(&negative, &base_neg)?,
            positive,
            negative,
        })
    }

    fn trajectory(&self, variant: &Variant) -> Result<EpochTrajectory> {
        let r = self.rankings(variant)?;
        let per_epoch = r
            .per_epoch
            .iter()
            .map(|(e, rs)| Ok((*e, self.matrices(&variant.to_string(), rs)?.0)))
            .collect::<Result<Vec<_>>>()?;
        epoch_trajectory(&per_epoch)
    }

    /// Computes every analysis; all needed rankings must be obtainable under
    /// the pipeline's policy.
    pub fn report(&self) -> Result<Report> {
        let names = self.languages();
        let variants = self.config().variants();
        let mut analyses = BTreeMap::new();
        for v in variants.iter().filter(|v| **v != Variant::Full) {
            analyses.insert(v.to_string(), self.analyse_variant(v)?);
        }
        let full_rankings = self.rankings(&Variant::Full)?;
        let (fp, fneg) = self.matrices("full", &full_rankings.summed)?;
        let zero = |m: &ContributionMatrix| DeltaMatrix {
            languages: m.languages.clone(),
            sign: m.sign,
            m: m.m,
            values: vec![vec![0.0; names.len()]; names.len()],
        };
        analyses.insert(
            "full".to_string(),
            VariantAnalysis {
                variant: "full".into(),
                eligible: full_rankings.eligible.len(),
                delta_positive: zero(&fp),
                delta_negative: zero(&fneg),
                positive: fp,
                negative: fneg,
            },
        );

        // dev accuracy and trajectories of every trained model
        let mut dev_accuracy = BTreeMap::new();
        let mut trajectories = BTreeMap::new();
        let mut fig7_x = Vec::new();
        let mut fig7_y = Vec::new();
        for v in variants.iter().filter(|v| v.keeps_epochs()) {
            let store = match v {
                Variant::Sft => self.sft_model(None)?,
                Variant::SftRandom(s) => self.sft_model(Some(*s))?,
                _ => std::rc::Rc::new(self.full_model()?.clone()),
            };
            dev_accuracy.insert(v.to_string(), store.last().expect("trained").dev_accuracy.clone());
            let t = self.trajectory(v)?;
            for (l, row) in t.values.iter().enumerate() {
                for (i, &spec) in row.iter().enumerate() {
                    fig7_x.push(spec);
                    fig7_y.push(store.snapshots()[i].dev_accuracy[l]);
                }
            }
            trajectories.insert(v.to_string(), t);
        }

        // mask similarity against cross-language positive influence
        let masks = self.masks()?;
        // an empty mask has no defined cosine; such cells stay NaN
        let values = masks
            .iter()
            .map(|a| masks.iter().map(|b| mask_cosine(a, b, None).unwrap_or(f64::NAN)).collect())
            .collect();
        let similarity = SimilarityMatrix { languages: names.clone(), layer: None, values };
        let influence_source = if self.config().variants.sft { "sft" } else { "subnet" };
        let infl = &analyses[influence_source].positive;
        let off_diagonal = |layer: Option<usize>| -> (Vec<f64>, Vec<f64>) {
            let mut x = Vec::new();
            let mut y = Vec::new();
            for a in 0..names.len() {
                for b in 0..names.len() {
                    if a == b {
                        continue;
                    }
                    if let Ok(c) = mask_cosine(&masks[a], &masks[b], layer) {
                        x.push(c);
                        y.push(infl.values[a][b]);
                    }
                }
            }
            (x, y)
        };
        let (sx, sy) = off_diagonal(None);
        let similarity_vs_influence = Correlation::from(&sx, &sy);
        let layers = self.config().model.num_layers;
        let layerwise = (0..layers)
            .map(|l| {
                let (x, y) = off_diagonal(Some(l));
                Correlation::from(&x, &y)
            })
            .collect();

        let subnet = &analyses["subnet"];
        let subnet_diagonal = diagonal(&subnet.delta_positive);
        let random_mean_diagonal: BTreeMap<u64, f64> = variants
            .iter()
            .filter_map(|v| match v {
                Variant::Random(s) => Some((*s, mean(&diagonal(&analyses[&v.to_string()].delta_positive)))),
                _ => None,
            })
            .collect();
        let random_overall = (!random_mean_diagonal.is_empty())
            .then(|| mean(&random_mean_diagonal.values().copied().collect::<Vec<_>>()));
        let spec_mean = |key: &str| analyses.get(key).map(|a| specialization(&a.positive).map(|s| mean(&s)));
        let sft_random_keys: Vec<String> =
            variants.iter().filter(|v| matches!(v, Variant::SftRandom(_))).map(|v| v.to_string()).collect();
        let sft_random_spec = if sft_random_keys.is_empty() {
            None
        } else {
            let vals = sft_random_keys.iter().map(|k| spec_mean(k).expect("analysed")).collect::<Result<Vec<_>>>()?;
            Some(mean(&vals))
        };
        let sft_random_acc = (!sft_random_keys.is_empty())
            .then(|| mean(&sft_random_keys.iter().map(|k| mean(&dev_accuracy[k])).collect::<Vec<_>>()));
        let m = &self.config().model;
        let summary = Summary {
            languages: names.clone(),
            subnet_mean_diagonal: mean(&subnet_diagonal),
            subnet_diagonal,
            random_mean_diagonal,
            random_mean_diagonal_overall: random_overall,
            sft_mean_specialization: spec_mean("sft").transpose()?,
            sft_random_mean_specialization: sft_random_spec,
            sft_mean_dev_accuracy: dev_accuracy.get("sft").map(|a| mean(a)),
            sft_random_mean_dev_accuracy: sft_random_acc,
            full_mean_dev_accuracy: mean(&dev_accuracy["full"]),
            specialization_vs_accuracy: Correlation::from(&fig7_x, &fig7_y),
            similarity_vs_influence,
            heads_kept: self
                .traces()?
                .iter()
                .map(|t| t.selected_mask(m.num_layers, m.heads_per_layer).enabled_count())
                .collect(),
        };
        let report = Report { summary, variants: analyses, dev_accuracy, similarity, layerwise, trajectories };
        Ok(report)
    }

    /// Computes the report and, with a workspace, rewrites the report bundle.
    pub fn write_report(&self) -> Result<Report> {
        let report = self.report()?;
        if let Some(ws) = self.workspace() {
            let started = Instant::now();
            let dir = ws.reset("report")?;
            write_bundle(&dir, &report, self)?;
            ws.finish("report", &self.report_hash(), started)?;
        }
        Ok(report)
    }
}

fn fmt(x: f64) -> String {
    if x.is_finite() {
        x.to_string()
    } else {
        String::new()
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(fmt).unwrap_or_default()
}

fn write_bundle(dir: &Path, report: &Report, pipeline: &Pipeline) -> Result<()> {
    let cfg = pipeline.config();
    let config_hash = cfg.hash();
    let names = &report.summary.languages;
    let meta = |variant: &'static str, note: &'static str| Meta {
        config: "",
        variant,
        sign: None,
        m: cfg.influence.top_m,
        eligible: None,
        note,
    };
    let write_variant = |sub: &Path, a: &VariantAnalysis| -> Result<()> {
        for (sign, c, d) in [
            (Sign::Positive, &a.positive, &a.delta_positive),
            (Sign::Negative, &a.negative, &a.delta_negative),
        ] {
            let s = match sign {
                Sign::Positive => "positive",
                Sign::Negative => "negative",
            };
            let m = Meta {
                config: &config_hash,
                variant: &a.variant,
                sign: Some(sign),
                m: c.m,
                eligible: Some(a.eligible),
                note: "rows: test language, columns: train language, entries in percent",
            };
            write_square(sub, &format!("{}_{s}", a.variant), names, &c.values, &m)?;
            if a.variant != "full" {
                let m = Meta { note: "variant minus full model on the variant's eligible tests", ..m };
                write_square(sub, &format!("delta_{}_{s}", a.variant), names, &d.values, &m)?;
            }
        }
        Ok(())
    };

    let fig2 = dir.join("fig2_delta");
    let compose_dir = dir.join("appF_compose");
    std::fs::create_dir_all(&compose_dir).map_err(|e| Error::io(&compose_dir, e))?;
    for a in report.variants.values() {
        if a.variant.starts_with("composed-") {
            write_variant(&compose_dir, a)?;
        } else {
            write_variant(&fig2, a)?;
        }
    }
    let masks = pipeline.masks()?;
    for c in &cfg.variants.composed {
        let ia = cfg.corpus.language_id(&c.a)?.index();
        let ib = cfg.corpus.language_id(&c.b)?.index();
        let composed = crate::analysis::compose(&masks[ia], &masks[ib], c.op)?;
        let v = Variant::Composed { op: c.op, a: c.a.clone(), b: c.b.clone() };
        composed.save(&compose_dir.join(format!("mask_{v}.json")))?;
    }

    // random-mask sparse fine-tuning
    let fig6 = dir.join("fig6_random_sft");
    let models: Vec<&String> = report.dev_accuracy.keys().collect();
    let mut header = vec!["language".to_string()];
    header.extend(models.iter().map(|m| m.to_string()));
    let spec_rows: Vec<Vec<String>> = names
        .iter()
        .enumerate()
        .map(|(l, n)| {
            std::iter::once(n.clone())
                .chain(models.iter().map(|m| fmt(report.variants[m.as_str()].positive.values[l][l])))
                .collect()
        })
        .collect();
    write_table(&fig6, "specialization", &header, &spec_rows, &meta("", "in-language share of positive top-m lists"))?;
    let acc_rows: Vec<Vec<String>> = names
        .iter()
        .enumerate()
        .map(|(l, n)| std::iter::once(n.clone()).chain(models.iter().map(|m| fmt(report.dev_accuracy[*m][l]))).collect())
        .collect();
    write_table(&fig6, "dev_accuracy", &header, &acc_rows, &meta("", "final-epoch dev accuracy under each model's masks"))?;
    for m in &models {
        if m.starts_with("sft") {
            write_variant(&fig6, &report.variants[m.as_str()])?;
        }
    }

    // specialization against dev accuracy over languages and checkpoints
    let fig7 = dir.join("fig7_corr");
    let mut rows = Vec::new();
    for (model, t) in &report.trajectories {
        let store_acc = |l: usize, i: usize| -> Result<f64> {
            let store = match model.parse::<Variant>()? {
                Variant::Sft => pipeline.sft_model(None)?,
                Variant::SftRandom(s) => pipeline.sft_model(Some(s))?,
                _ => std::rc::Rc::new(pipeline.full_model()?.clone()),
            };
            Ok(store.snapshots()[i].dev_accuracy[l])
        };
        for (l, row) in t.values.iter().enumerate() {
            for (i, &spec) in row.iter().enumerate() {
                rows.push(vec![
                    model.clone(),
                    names[l].clone(),
                    t.epochs[i].to_string(),
                    fmt(spec),
                    fmt(store_acc(l, i)?),
                ]);
            }
        }
    }
    let header: Vec<String> =
        ["model", "language", "epoch", "specialization", "dev_accuracy"].iter().map(|s| s.to_string()).collect();
    write_table(&fig7, "pairs", &header, &rows, &report.summary.specialization_vs_accuracy)?;

    // mask similarity against cross-language influence
    let fig8 = dir.join("fig8_sim_corr");
    write_square(&fig8, "mask_similarity", names, &report.similarity.values, &meta("", "cosine of flattened masks"))?;
    let source = if cfg.variants.sft { "sft" } else { "subnet" };
    let infl = &report.variants[source].positive;
    let mut rows = Vec::new();
    for a in 0..names.len() {
        for b in 0..names.len() {
            if a != b {
                rows.push(vec![
                    names[a].clone(),
                    names[b].clone(),
                    fmt(report.similarity.values[a][b]),
                    fmt(infl.values[a][b]),
                ]);
            }
        }
    }
    let header: Vec<String> =
        ["test_language", "train_language", "mask_cosine", "positive_influence"].iter().map(|s| s.to_string()).collect();
    write_table(&fig8, "pairs", &header, &rows, &report.summary.similarity_vs_influence)?;

    // per-layer version
    let fig9 = dir.join("fig9_layerwise");
    let rows: Vec<Vec<String>> = report
        .layerwise
        .iter()
        .enumerate()
        .map(|(l, c)| vec![l.to_string(), opt(c.r), c.n.to_string(), c.note.clone().unwrap_or_default()])
        .collect();
    let header: Vec<String> = ["layer", "r", "n", "note"].iter().map(|s| s.to_string()).collect();
    write_table(&fig9, "layers", &header, &rows, &meta(source, "pairs with an all-zero layer are skipped"))?;

    // per-epoch specialization
    let fig10 = dir.join("fig10_epochs");
    for (model, t) in &report.trajectories {
        let mut header = vec!["language".to_string()];
        header.extend(t.epochs.iter().map(|e| format!("epoch_{e}")));
        let rows: Vec<Vec<String>> = t
            .languages
            .iter()
            .zip(&t.values)
            .map(|(l, v)| std::iter::once(l.clone()).chain(v.iter().map(|x| fmt(*x))).collect())
            .collect();
        write_table(&fig10, &format!("trajectory_{model}"), &header, &rows, &meta("", "single-checkpoint specialization"))?;
    }

    let path = dir.join("summary.json");
    std::fs::write(&path, serde_json::to_vec_pretty(&report.summary)?).map_err(|e| Error::io(&path, e))
}
