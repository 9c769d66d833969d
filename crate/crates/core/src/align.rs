//! Phenotype-to-phenomenon alignment: rank-percentile matrices over the
//! units a phenotype ranks highest, per-task profiles, and Spearman
//! stability of those profiles across selection thresholds.

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::UnitId;
use crate::phenotype::select_top_fraction;
use crate::probe::AttributionMap;

/// Spearman rank correlation with average ranks on ties. A constant input
/// vector has no defined correlation and is reported as an error.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::Input(format!(
            "spearman wants two equal-length vectors of at least 2, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    let rx = average_ranks(x);
    let ry = average_ranks(y);
    pearson(&rx, &ry)
}

fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].partial_cmp(&x[b]).unwrap());
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        // Tied block [i, j] shares the average of ranks i+1 ..= j+1.
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
        sxy += (a - mx) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation(
            "constant vector has no rank correlation".into(),
        ));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

pub const SUMMARY_SEMANTIC: &str = "semavg";
pub const SUMMARY_SYNTACTIC: &str = "synavg";
pub const SUMMARY_OVERALL: &str = "overall";

/// Rank percentiles H(i,j) = rank of unit i on task j / unit count, for the
/// top-p% units of a phenotype ranking. Rows follow phenotype-rank order;
/// base task columns are followed by semantic/syntactic/overall summary
/// columns (row means over member tasks). Summary columns are derived and
/// never enter profile vectors.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RankPercentileMatrix {
    pub phenotype: String,
    pub units: Vec<UnitId>,
    pub columns: Vec<String>,
    /// entries[row][column]; all values in (0, 1].
    pub entries: Vec<Vec<f64>>,
    pub base_tasks: usize,
    pub p: f64,
}

/// Base percentile rows (no summary columns) for the top-p% units.
fn percentile_rows(
    ranking: &[(UnitId, f64)],
    p: f64,
    attr: &AttributionMap,
) -> Result<(Vec<UnitId>, Vec<Vec<f64>>)> {
    let selected = select_top_fraction(ranking, p)?;
    let n_units = attr.units.len() as f64;
    // unit -> integer rank per task, from the attribution ranking.
    let mut rank_of: Vec<std::collections::BTreeMap<UnitId, usize>> = Vec::new();
    for task in &attr.tasks {
        let order = attr.phenomenon_ranking(task)?;
        rank_of.push(order.iter().enumerate().map(|(i, &(u, _))| (u, i + 1)).collect());
    }
    let mut entries = Vec::with_capacity(selected.len());
    for unit in &selected {
        let mut row = Vec::with_capacity(attr.tasks.len());
        for per_task in &rank_of {
            let r = *per_task
                .get(unit)
                .ok_or_else(|| Error::Data(format!("unit {unit} missing from attribution map")))?;
            row.push(r as f64 / n_units);
        }
        entries.push(row);
    }
    Ok((selected, entries))
}

pub fn rank_percentile_matrix(
    phenotype: &str,
    ranking: &[(UnitId, f64)],
    p: f64,
    attr: &AttributionMap,
    semantic_tasks: &[&str],
    syntactic_tasks: &[&str],
) -> Result<RankPercentileMatrix> {
    if semantic_tasks.is_empty() || syntactic_tasks.is_empty() {
        return Err(Error::Input("summary columns need non-empty task groups".into()));
    }
    let sem_cols: Vec<usize> = columns_of(attr, semantic_tasks)?;
    let syn_cols: Vec<usize> = columns_of(attr, syntactic_tasks)?;
    let (selected, mut entries) = percentile_rows(ranking, p, attr)?;
    for row in entries.iter_mut() {
        let mean_over = |cols: &[usize]| cols.iter().map(|&c| row[c]).sum::<f64>() / cols.len() as f64;
        let sem = mean_over(&sem_cols);
        let syn = mean_over(&syn_cols);
        let overall = row.iter().sum::<f64>() / row.len() as f64;
        row.push(sem);
        row.push(syn);
        row.push(overall);
    }
    let mut columns = attr.tasks.clone();
    columns.push(SUMMARY_SEMANTIC.into());
    columns.push(SUMMARY_SYNTACTIC.into());
    columns.push(SUMMARY_OVERALL.into());
    Ok(RankPercentileMatrix {
        phenotype: phenotype.to_string(),
        units: selected,
        columns,
        entries,
        base_tasks: attr.tasks.len(),
        p,
    })
}

fn columns_of(attr: &AttributionMap, tasks: &[&str]) -> Result<Vec<usize>> {
    tasks.iter().map(|t| attr.task_index(t)).collect()
}

impl RankPercentileMatrix {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("unit");
        for c in &self.columns {
            out.push(',');
            out.push_str(c);
        }
        out.push('\n');
        for (unit, row) in self.units.iter().zip(&self.entries) {
            out.push_str(&unit.to_string());
            for v in row {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        crate::pipeline::atomic_write(&dir.join(format!("{stem}.csv")), self.to_csv().as_bytes())?;
        let json = serde_json::to_string_pretty(self)?;
        crate::pipeline::atomic_write(&dir.join(format!("{stem}.json")), json.as_bytes())
    }
}

/// Mean rank-percentile per base task over the top-p% units.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskProfile {
    pub p: f64,
    pub tasks: Vec<String>,
    pub values: Vec<f64>,
}

pub fn task_profile(
    ranking: &[(UnitId, f64)],
    p: f64,
    attr: &AttributionMap,
) -> Result<TaskProfile> {
    let (_, entries) = percentile_rows(ranking, p, attr)?;
    let rows = entries.len() as f64;
    let values = (0..attr.tasks.len())
        .map(|c| entries.iter().map(|row| row[c]).sum::<f64>() / rows)
        .collect();
    Ok(TaskProfile { p, tasks: attr.tasks.clone(), values })
}

pub const DEFAULT_THRESHOLDS: [f64; 6] = [0.5, 1.0, 2.0, 3.0, 5.0, 10.0];
pub const REFERENCE_THRESHOLD: f64 = 2.0;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ThresholdSweep {
    pub thresholds: Vec<f64>,
    /// rho[i][j] = Spearman between task profiles at thresholds i and j.
    pub rho: Vec<Vec<f64>>,
    /// Correlation of every threshold's profile against the 2% reference.
    pub reference_row: Vec<f64>,
}

fn is_constant(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[0] == w[1])
}

/// Correlation between two task profiles. A constant profile carries no
/// ranking information, so by convention it correlates 1 with an identical
/// constant profile and 0 with anything else; Spearman handles the rest.
fn profile_rho(a: &[f64], b: &[f64]) -> Result<f64> {
    if is_constant(a) || is_constant(b) {
        return Ok(if a == b { 1.0 } else { 0.0 });
    }
    spearman(a, b)
}

/// Profile-stability sweep over selection thresholds.
pub fn p_sweep(
    ranking: &[(UnitId, f64)],
    attr: &AttributionMap,
    thresholds: &[f64],
) -> Result<ThresholdSweep> {
    if thresholds.is_empty() || thresholds.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Input("thresholds must be sorted and distinct".into()));
    }
    let profiles: Vec<TaskProfile> = thresholds
        .iter()
        .map(|&p| task_profile(ranking, p, attr))
        .collect::<Result<_>>()?;
    let n = thresholds.len();
    let mut rho = vec![vec![1.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let r = profile_rho(&profiles[i].values, &profiles[j].values)?;
            rho[i][j] = r;
            rho[j][i] = r;
        }
    }
    let reference_row = match thresholds.iter().position(|&p| p == REFERENCE_THRESHOLD) {
        Some(i) => rho[i].clone(),
        None => {
            let reference = task_profile(ranking, REFERENCE_THRESHOLD, attr)?;
            profiles
                .iter()
                .map(|pr| profile_rho(&pr.values, &reference.values))
                .collect::<Result<_>>()?
        }
    };
    Ok(ThresholdSweep { thresholds: thresholds.to_vec(), rho, reference_row })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::UnitKind;

    fn unit(i: u16) -> UnitId {
        UnitId { layer: 0, index: i, kind: UnitKind::Expert }
    }

    /// 3 units x 2 tasks. Rankings by rising delta:
    /// taskA: u0 (-0.6) < u2 (-0.3) < u1 (0.0)  -> ranks u0=1, u2=2, u1=3
    /// taskB: u1 (-0.9) < u0 (-0.2) < u2 (0.1)  -> ranks u1=1, u0=2, u2=3
    fn fixture() -> AttributionMap {
        AttributionMap {
            tasks: vec!["taskA".into(), "taskB".into()],
            units: vec![unit(0), unit(1), unit(2)],
            baseline: vec![1.0, 1.0],
            deltas: vec![vec![-0.6, 0.0, -0.3], vec![-0.2, -0.9, 0.1]],
            model_fingerprint: String::new(),
            task_fingerprint: String::new(),
        }
    }

    fn ranking() -> Vec<(UnitId, f64)> {
        vec![(unit(1), 0.9), (unit(0), 0.5), (unit(2), 0.1)]
    }

    #[test]
    fn spearman_reference_values() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert!((spearman(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        let rev = [4.0, 3.0, 2.0, 1.0];
        assert!((spearman(&x, &rev).unwrap() + 1.0).abs() < 1e-12);
        // Closed form: 1 - 6*2 / (3*8) = 0.5
        let r = spearman(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap();
        assert!((r - 0.5).abs() < 1e-12);
        assert!(spearman(&[1.0, 1.0, 1.0], &x[..3]).is_err());
        assert!(spearman(&[1.0], &[1.0]).is_err());
        assert!(spearman(&x, &x[..3]).is_err());
    }

    #[test]
    fn spearman_monotone_invariance_and_tie_ranks() {
        let x = [0.3, 0.7, 0.1, 0.9, 0.5];
        let y = [2.0, -1.0, 4.0, 0.5, 1.0];
        let base = spearman(&x, &y).unwrap();
        let warped: Vec<f64> = x.iter().map(|v| (v * 3.0).exp()).collect();
        assert!((spearman(&warped, &y).unwrap() - base).abs() < 1e-12);
        assert_eq!(average_ranks(&[1.0, 1.0, 2.0]), vec![1.5, 1.5, 3.0]);
    }

    #[test]
    fn percentile_matrix_matches_hand_computation() {
        let attr = fixture();
        let m = rank_percentile_matrix(
            "broca",
            &ranking(),
            100.0,
            &attr,
            &["taskB"],
            &["taskA"],
        )
        .unwrap();
        assert_eq!(m.units, vec![unit(1), unit(0), unit(2)]);
        assert_eq!(m.columns, vec!["taskA", "taskB", "semavg", "synavg", "overall"]);
        // Hand-computed: entry = rank/3.
        let want = [
            // u1: taskA rank 3, taskB rank 1
            [3.0 / 3.0, 1.0 / 3.0],
            // u0: taskA rank 1, taskB rank 2
            [1.0 / 3.0, 2.0 / 3.0],
            // u2: taskA rank 2, taskB rank 3
            [2.0 / 3.0, 3.0 / 3.0],
        ];
        for (row, w) in m.entries.iter().zip(want) {
            assert_eq!(row[0], w[0]);
            assert_eq!(row[1], w[1]);
            assert_eq!(row[2], w[1]); // semavg over {taskB}
            assert_eq!(row[3], w[0]); // synavg over {taskA}
            assert!((row[4] - (w[0] + w[1]) / 2.0).abs() < 1e-15);
            assert!(row.iter().all(|&v| v > 0.0 && v <= 1.0));
        }
    }

    #[test]
    fn singleton_profile_equals_unit_row() {
        let attr = fixture();
        // p small enough that only the top phenotype unit (u1) is selected.
        let profile = task_profile(&ranking(), 1.0, &attr).unwrap();
        assert_eq!(profile.values, vec![1.0, 1.0 / 3.0]);
        // Full selection: hand-computed means over the 3x2 fixture.
        let full = task_profile(&ranking(), 100.0, &attr).unwrap();
        assert!((full.values[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((full.values[1] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn sweep_diagonal_symmetry_and_reference_row() {
        let attr = fixture();
        // p=20% selects 1 unit, p=50% selects 2; both profiles order the
        // two tasks the same way, so every correlation is exactly 1. (A
        // 100% selection would make the profile constant: percentile ranks
        // over all units are a permutation.)
        let sweep = p_sweep(&ranking(), &attr, &[20.0, 50.0]).unwrap();
        for i in 0..2 {
            assert_eq!(sweep.rho[i][i], 1.0);
            for j in 0..2 {
                assert_eq!(sweep.rho[i][j], 1.0);
            }
        }
        assert_eq!(sweep.reference_row, vec![1.0, 1.0]);
        assert!(p_sweep(&ranking(), &attr, &[5.0, 5.0]).is_err());
        assert!(p_sweep(&ranking(), &attr, &[]).is_err());
        let single = p_sweep(&ranking(), &attr, &[50.0]).unwrap();
        assert_eq!(single.rho, vec![vec![1.0]]);
    }

    #[test]
    fn constant_profiles_do_not_fail_the_sweep() {
        let attr = fixture();
        // 100% selection averages percentile ranks over every unit, giving
        // the same value for both tasks: a constant profile. The sweep must
        // still complete, correlating it 0 against informative profiles.
        let sweep = p_sweep(&ranking(), &attr, &[50.0, 100.0]).unwrap();
        assert_eq!(sweep.rho[0][1], 0.0);
        assert_eq!(sweep.rho[1][0], 0.0);
        assert_eq!(sweep.rho[1][1], 1.0);
        assert!(sweep.reference_row.iter().all(|r| r.is_finite()));
    }
}
