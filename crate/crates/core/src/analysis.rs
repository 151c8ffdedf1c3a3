//! Contribution matrices, deltas, specialization, mask similarity,
//! correlations, per-epoch trajectories and mask composition.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::influence::InfluenceRanking;
use crate::model::{LanguageId, SubnetworkMask};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sign {
    Positive,
    Negative,
}

/// Rows are test languages, columns train languages; entries are the mean
/// percentage of the top-m list drawn from each train language.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContributionMatrix {
    pub languages: Vec<String>,
    pub sign: Sign,
    pub m: usize,
    pub variant: String,
    pub values: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaMatrix {
    pub languages: Vec<String>,
    pub sign: Sign,
    pub m: usize,
    pub values: Vec<Vec<f64>>,
}

pub fn contribution_matrix(
    rankings: &[InfluenceRanking],
    test_language: &HashMap<u64, LanguageId>,
    train_language: &HashMap<u64, LanguageId>,
    languages: &[String],
    sign: Sign,
    variant: &str,
) -> Result<ContributionMatrix> {
    let n = languages.len();
    let m = rankings.first().map(|r| r.m).ok_or_else(|| Error::contract("no rankings"))?;
    let mut counts = vec![vec![0usize; n]; n];
    let mut tests = vec![0usize; n];
    for r in rankings {
        if r.m != m {
            return Err(Error::contract(format!("rankings mix m = {m} and m = {}", r.m)));
        }
        let row = test_language
            .get(&r.test_id)
            .ok_or_else(|| Error::Lookup(format!("test id {} has no language", r.test_id)))?
            .index();
        tests[row] += 1;
        let list = match sign {
            Sign::Positive => &r.positive,
            Sign::Negative => &r.negative,
        };
        for item in list {
            let col = train_language
                .get(&item.train_id)
                .ok_or_else(|| Error::Lookup(format!("train id {} has no language", item.train_id)))?
                .index();
            counts[row][col] += 1;
        }
    }
    if let Some(l) = tests.iter().position(|&t| t == 0) {
        return Err(Error::contract(format!("no eligible test examples for {}", languages[l])));
    }
    let values = counts
        .iter()
        .zip(&tests)
        .map(|(row, &t)| row.iter().map(|&c| c as f64 * 100.0 / (m * t) as f64).collect())
        .collect();
    Ok(ContributionMatrix { languages: languages.to_vec(), sign, m, variant: variant.to_string(), values })
}

pub fn delta_matrix(variant: &ContributionMatrix, baseline: &ContributionMatrix) -> Result<DeltaMatrix> {
    if variant.languages != baseline.languages || variant.sign != baseline.sign || variant.m != baseline.m {
        return Err(Error::contract("delta needs matrices with the same languages, sign and m"));
    }
    let values = variant
        .values
        .iter()
        .zip(&baseline.values)
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x - y).collect())
        .collect();
    Ok(DeltaMatrix { languages: variant.languages.clone(), sign: variant.sign, m: variant.m, values })
}

/// In-language share per test language (the matrix diagonal).
pub fn specialization(matrix: &ContributionMatrix) -> Result<Vec<f64>> {
    let n = matrix.languages.len();
    if matrix.values.len() != n || matrix.values.iter().any(|r| r.len() != n) {
        return Err(Error::contract("contribution matrix is not square over its language labels"));
    }
    Ok((0..n).map(|i| matrix.values[i][i]).collect())
}

/// Cosine of the flattened masks, or of one layer's bits.
pub fn mask_cosine(a: &SubnetworkMask, b: &SubnetworkMask, layer: Option<usize>) -> Result<f64> {
    a.check_same_shape(b)?;
    let (xa, xb) = match layer {
        Some(l) if l >= a.layers() => return Err(Error::contract(format!("layer {l} out of range"))),
        Some(l) => (a.layer_bits(l), b.layer_bits(l)),
        None => (a.bits(), b.bits()),
    };
    let na = xa.iter().filter(|&&x| x).count();
    let nb = xb.iter().filter(|&&x| x).count();
    if na == 0 || nb == 0 {
        return Err(Error::UndefinedSimilarity("an operand has no enabled heads".into()));
    }
    let both = xa.iter().zip(xb).filter(|(&x, &y)| x && y).count();
    Ok(both as f64 / ((na as f64) * (nb as f64)).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityMatrix {
    pub languages: Vec<String>,
    pub layer: Option<usize>,
    pub values: Vec<Vec<f64>>,
}

pub fn similarity_matrix(masks: &[SubnetworkMask], languages: &[String], layer: Option<usize>) -> Result<SimilarityMatrix> {
    if masks.len() != languages.len() {
        return Err(Error::contract("one mask per language required"));
    }
    let values = masks
        .iter()
        .map(|a| masks.iter().map(|b| mask_cosine(a, b, layer)).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    Ok(SimilarityMatrix { languages: languages.to_vec(), layer, values })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationResult {
    pub r: f64,
    pub n: usize,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<CorrelationResult> {
    if x.len() != y.len() || x.len() < 3 {
        return Err(Error::contract(format!("pearson needs two series of equal length ≥ 3, got {} and {}", x.len(), y.len())));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation("a series is constant".into()));
    }
    let r = (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0);
    Ok(CorrelationResult { r, n: x.len(), x: x.to_vec(), y: y.to_vec() })
}

/// Specialization per language across epochs: `values[language][epoch - 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochTrajectory {
    pub languages: Vec<String>,
    pub epochs: Vec<usize>,
    pub values: Vec<Vec<f64>>,
}

/// Builds trajectories from matrices computed on single-checkpoint scores;
/// epochs must be exactly 1..=E.
pub fn epoch_trajectory(per_epoch: &[(usize, ContributionMatrix)]) -> Result<EpochTrajectory> {
    let first = &per_epoch.first().ok_or_else(|| Error::contract("no epochs"))?.1;
    for (i, (epoch, m)) in per_epoch.iter().enumerate() {
        if *epoch != i + 1 {
            return Err(Error::contract(format!("missing epoch {}", i + 1)));
        }
        if m.languages != first.languages {
            return Err(Error::contract("epoch matrices disagree on languages"));
        }
    }
    let diagonals = per_epoch.iter().map(|(_, m)| specialization(m)).collect::<Result<Vec<_>>>()?;
    let values = (0..first.languages.len()).map(|l| diagonals.iter().map(|d| d[l]).collect()).collect();
    Ok(EpochTrajectory {
        languages: first.languages.clone(),
        epochs: per_epoch.iter().map(|(e, _)| *e).collect(),
        values,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ComposeOp {
    Union,
    Intersect,
}

pub fn compose(a: &SubnetworkMask, b: &SubnetworkMask, op: ComposeOp) -> Result<SubnetworkMask> {
    a.check_same_shape(b)?;
    let bits = a
        .bits()
        .iter()
        .zip(b.bits())
        .map(|(&x, &y)| match op {
            ComposeOp::Union => x || y,
            ComposeOp::Intersect => x && y,
        })
        .collect();
    SubnetworkMask::from_bits(a.layers(), a.heads(), bits)
}

/// Writes `name.csv` (a header row then one row per entry) and `name.json`
/// holding `meta`.
pub fn write_table<M: Serialize>(
    dir: &Path,
    name: &str,
    header: &[String],
    rows: &[Vec<String>],
    meta: &M,
) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(format!("{name}.csv"));
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    let side = dir.join(format!("{name}.json"));
    std::fs::write(&side, serde_json::to_vec_pretty(meta)?).map_err(|e| Error::io(&side, e))
}

/// Square language table as CSV: first column is the row language; non-finite
/// entries are left empty.
pub fn write_square(dir: &Path, name: &str, languages: &[String], values: &[Vec<f64>], meta: &impl Serialize) -> Result<()> {
    let mut header = vec!["language".to_string()];
    header.extend(languages.iter().cloned());
    let rows: Vec<Vec<String>> = languages
        .iter()
        .zip(values)
        .map(|(l, row)| std::iter::once(l.clone()).chain(row.iter().map(|v| if v.is_finite() { v.to_string() } else { String::new() })).collect())
        .collect();
    write_table(dir, name, &header, &rows, meta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::influence::RankedTrain;
    use proptest::prelude::*;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("L{i}")).collect()
    }

    fn ranking(test_id: u64, positive: &[u64], negative: &[u64]) -> InfluenceRanking {
        let list = |ids: &[u64]| ids.iter().map(|&train_id| RankedTrain { train_id, score: 0.0 }).collect();
        InfluenceRanking { test_id, m: positive.len(), positive: list(positive), negative: list(negative) }
    }

    #[test]
    fn single_test_row_is_its_split() {
        // train ids 0..100: 40 from L0, 30 from L1, 30 from L2
        let train: HashMap<u64, LanguageId> =
            (0..100).map(|i| (i, LanguageId(if i < 40 { 0 } else if i < 70 { 1 } else { 2 }))).collect();
        let test: HashMap<u64, LanguageId> = (0..5).map(|i| (i, LanguageId(i as u16))).collect();
        let ids: Vec<u64> = (0..100).collect();
        let rs: Vec<InfluenceRanking> = (0..5).map(|t| ranking(t, &ids, &ids)).collect();
        let m = contribution_matrix(&rs, &test, &train, &names(5), Sign::Positive, "full").unwrap();
        assert_eq!(m.values[0], vec![40.0, 30.0, 30.0, 0.0, 0.0]);
    }

    #[test]
    fn empty_group_is_contract_violation() {
        let train: HashMap<u64, LanguageId> = [(0, LanguageId(0))].into();
        let test: HashMap<u64, LanguageId> = [(0, LanguageId(0))].into();
        let rs = vec![ranking(0, &[0], &[0])];
        assert!(matches!(
            contribution_matrix(&rs, &test, &train, &names(2), Sign::Positive, "full"),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn delta_examples() {
        let base = ContributionMatrix {
            languages: names(2),
            sign: Sign::Positive,
            m: 100,
            variant: "full".into(),
            values: vec![vec![33.0, 67.0], vec![50.0, 50.0]],
        };
        let mut sub = base.clone();
        sub.values[0] = vec![35.0, 65.0];
        let d = delta_matrix(&sub, &base).unwrap();
        assert_eq!(d.values[0], vec![2.0, -2.0]);
        assert!(delta_matrix(&base, &base).unwrap().values.iter().flatten().all(|&v| v == 0.0));
        let mut neg = base.clone();
        neg.sign = Sign::Negative;
        assert!(delta_matrix(&neg, &base).is_err());
    }

    #[test]
    fn specialization_of_identity_and_uniform() {
        let mk = |f: fn(usize, usize) -> f64| ContributionMatrix {
            languages: names(5),
            sign: Sign::Positive,
            m: 10,
            variant: "x".into(),
            values: (0..5).map(|i| (0..5).map(|j| f(i, j)).collect()).collect(),
        };
        assert_eq!(specialization(&mk(|i, j| if i == j { 100.0 } else { 0.0 })).unwrap(), vec![100.0; 5]);
        assert_eq!(specialization(&mk(|_, _| 20.0)).unwrap(), vec![20.0; 5]);
        let mut bad = mk(|_, _| 20.0);
        bad.languages.pop();
        assert!(specialization(&bad).is_err());
    }

    #[test]
    fn mask_cosine_examples() {
        let a = SubnetworkMask::from_bits(1, 4, vec![true, true, false, false]).unwrap();
        let b = SubnetworkMask::from_bits(1, 4, vec![false, false, true, true]).unwrap();
        let c = SubnetworkMask::from_bits(1, 4, vec![true, false, true, false]).unwrap();
        assert_eq!(mask_cosine(&a, &a, None).unwrap(), 1.0);
        assert_eq!(mask_cosine(&a, &b, None).unwrap(), 0.0);
        assert!((mask_cosine(&a, &c, None).unwrap() - 0.5).abs() < 1e-15);
        assert!(matches!(mask_cosine(&a, &SubnetworkMask::zeros(1, 4), None), Err(Error::UndefinedSimilarity(_))));
        let two = SubnetworkMask::from_bits(2, 2, vec![true, false, true, true]).unwrap();
        let other = SubnetworkMask::from_bits(2, 2, vec![false, true, true, true]).unwrap();
        assert!(matches!(mask_cosine(&two, &other, Some(0)), Ok(v) if v == 0.0));
        assert_eq!(mask_cosine(&two, &other, Some(1)).unwrap(), 1.0);
    }

    #[test]
    fn pearson_closed_forms() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
        assert!((pearson(&x, &y).unwrap().r - 1.0).abs() < 1e-12);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pearson(&x, &neg).unwrap().r + 1.0).abs() < 1e-12);
        // direct evaluation: x̄ = 3, ȳ = 3.4, Σdxdy = 8, Σdx² = 10, Σdy² = 9.2
        let z = [2.0, 3.0, 2.0, 5.0, 5.0];
        let want = 8.0 / (10.0f64.sqrt() * 9.2f64.sqrt());
        assert!((pearson(&x, &z).unwrap().r - want).abs() < 1e-12);
        assert!(matches!(pearson(&x, &[1.0; 5]), Err(Error::UndefinedCorrelation(_))));
        assert!(pearson(&x[..2], &y[..2]).is_err());
    }

    #[test]
    fn trajectory_shape_and_missing_epoch() {
        let mk = |d: f64| ContributionMatrix {
            languages: names(2),
            sign: Sign::Positive,
            m: 1,
            variant: "full".into(),
            values: vec![vec![d, 100.0 - d], vec![100.0 - d, d]],
        };
        let t = epoch_trajectory(&[(1, mk(80.0)), (2, mk(60.0)), (3, mk(40.0))]).unwrap();
        assert_eq!(t.values[0], vec![80.0, 60.0, 40.0]);
        assert!(t.values.iter().all(|s| s.windows(2).all(|w| w[1] < w[0])));
        assert!(epoch_trajectory(&[(1, mk(1.0)), (3, mk(2.0))]).is_err());
    }

    #[test]
    fn table_writes_csv_and_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        write_square(dir.path(), "m", &names(2), &[vec![1.0, 2.0], vec![3.0, 4.5]], &serde_json::json!({"variant": "x"}))
            .unwrap();
        let csv = std::fs::read_to_string(dir.path().join("m.csv")).unwrap();
        assert_eq!(csv, "language,L0,L1\nL0,1,2\nL1,3,4.5\n");
        assert!(dir.path().join("m.json").exists());
    }

    fn mask_strategy() -> impl Strategy<Value = SubnetworkMask> {
        proptest::collection::vec(any::<bool>(), 12).prop_map(|b| SubnetworkMask::from_bits(3, 4, b).unwrap())
    }

    proptest! {
        #[test]
        fn composition_matches_set_algebra(a in mask_strategy(), b in mask_strategy()) {
            let set = |m: &SubnetworkMask| -> std::collections::BTreeSet<usize> {
                m.bits().iter().enumerate().filter(|(_, &x)| x).map(|(i, _)| i).collect()
            };
            let u = compose(&a, &b, ComposeOp::Union).unwrap();
            let i = compose(&a, &b, ComposeOp::Intersect).unwrap();
            prop_assert_eq!(set(&u), set(&a).union(&set(&b)).copied().collect());
            prop_assert_eq!(set(&i), set(&a).intersection(&set(&b)).copied().collect());
            prop_assert_eq!(compose(&a, &a, ComposeOp::Intersect).unwrap(), a.clone());
        }

        #[test]
        fn similarity_is_symmetric_with_unit_diagonal(ms in proptest::collection::vec(mask_strategy(), 4)) {
            prop_assume!(ms.iter().all(|m| m.enabled_count() > 0));
            let s = similarity_matrix(&ms, &names(4), None).unwrap();
            for i in 0..4 {
                prop_assert!((s.values[i][i] - 1.0).abs() < 1e-12);
                for j in 0..4 {
                    prop_assert_eq!(s.values[i][j], s.values[j][i]);
                    prop_assert!((0.0..=1.0 + 1e-12).contains(&s.values[i][j]));
                }
            }
        }

        #[test]
        fn contribution_rows_sum_to_hundred(assign in proptest::collection::vec(0u16..4, 30), m in 1usize..15, seed in any::<u64>()) {
            let train: HashMap<u64, LanguageId> = assign.iter().enumerate().map(|(i, &l)| (i as u64, LanguageId(l))).collect();
            let test: HashMap<u64, LanguageId> = (0..8).map(|i| (i, LanguageId((i % 4) as u16))).collect();
            let rs: Vec<InfluenceRanking> = (0..8u64)
                .map(|t| {
                    let ids: Vec<u64> = (0..m as u64).map(|k| (k * 7 + t + seed % 5) % 30).collect();
                    ranking(t, &ids, &ids)
                })
                .collect();
            let a = contribution_matrix(&rs, &test, &train, &names(4), Sign::Positive, "a").unwrap();
            for row in &a.values {
                prop_assert!((row.iter().sum::<f64>() - 100.0).abs() < 1e-9);
                prop_assert!(row.iter().all(|&v| v >= 0.0));
            }
            let d = delta_matrix(&a, &a).unwrap();
            for row in &d.values {
                prop_assert!(row.iter().sum::<f64>().abs() < 1e-9);
            }
        }
    }
}
