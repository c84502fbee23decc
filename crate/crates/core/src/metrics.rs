//! Normalized-RMSE variants, AP-selection error and a small timing harness.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::slice::from_ref;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::pipeline::SampleMask;

fn check_lists<T>(ys: &[Grid<f64>], yhats: &[Grid<f64>], extra: &[Grid<T>]) -> Result<()> {
    if ys.is_empty() {
        return Err(Error::EmptyDataset("no maps to score".into()));
    }
    if ys.len() != yhats.len() {
        return Err(Error::ShapeMismatch(format!("{} targets vs {} predictions", ys.len(), yhats.len())));
    }
    for (i, (y, p)) in ys.iter().zip(yhats).enumerate() {
        if !y.same_shape(p) || extra.get(i).is_some_and(|e| !y.same_shape(e)) {
            return Err(Error::ShapeMismatch(format!("map {i}: shapes differ")));
        }
    }
    Ok(())
}

/// sqrt(sum over maps and pixels of squared error / (L * N)).
pub fn rmse_full(ys: &[Grid<f64>], yhats: &[Grid<f64>]) -> Result<f64> {
    check_lists::<f64>(ys, yhats, &[])?;
    let (mut sum, mut n) = (0.0, 0usize);
    for (y, p) in ys.iter().zip(yhats) {
        for (a, b) in y.as_slice().iter().zip(p.as_slice()) {
            sum += (a - b) * (a - b);
        }
        n += y.len();
    }
    Ok((sum / n as f64).sqrt())
}

/// Building pixels (mask value nonzero) are zeroed in both maps first; the
/// denominator still counts every pixel.
pub fn rmse_challenge(ys: &[Grid<f64>], yhats: &[Grid<f64>], buildings: &[Grid<u8>]) -> Result<f64> {
    check_lists(ys, yhats, buildings)?;
    if buildings.len() != ys.len() {
        return Err(Error::ShapeMismatch(format!("{} building masks for {} maps", buildings.len(), ys.len())));
    }
    let zero = |g: &Grid<f64>, b: &Grid<u8>| {
        Grid::from_vec(
            g.width(),
            g.height(),
            g.as_slice().iter().zip(b.as_slice()).map(|(&v, &m)| if m != 0 { 0.0 } else { v }).collect(),
        )
    };
    let y0: Vec<Grid<f64>> = ys.iter().zip(buildings).map(|(g, b)| zero(g, b)).collect();
    let p0: Vec<Grid<f64>> = yhats.iter().zip(buildings).map(|(g, b)| zero(g, b)).collect();
    rmse_full(&y0, &p0)
}

/// RMSE over the mask's pixels only, denominator L * N_u.
pub fn rmse_at_locations(ys: &[Grid<f64>], yhats: &[Grid<f64>], mask: &SampleMask) -> Result<f64> {
    check_lists::<f64>(ys, yhats, &[])?;
    let mut sum = 0.0;
    for (y, p) in ys.iter().zip(yhats) {
        if y.width() != mask.width || y.height() != mask.height {
            return Err(Error::ShapeMismatch("mask size differs from the maps".into()));
        }
        for &(x, yy) in &mask.pixels {
            let r = y.get(x, yy) - p.get(x, yy);
            sum += r * r;
        }
    }
    Ok((sum / (ys.len() * mask.len()) as f64).sqrt())
}

/// Percentage of locations whose estimated AP set differs from the true one.
/// Order inside a set is ignored; any difference counts as a miss.
pub fn ap_selection_error(true_sets: &[Vec<usize>], est_sets: &[Vec<usize>]) -> Result<f64> {
    if true_sets.is_empty() {
        return Err(Error::EmptyDataset("no locations to score".into()));
    }
    if true_sets.len() != est_sets.len() {
        return Err(Error::ShapeMismatch(format!("{} true sets vs {} estimates", true_sets.len(), est_sets.len())));
    }
    let misses = true_sets
        .iter()
        .zip(est_sets)
        .filter(|(a, b)| a.iter().collect::<BTreeSet<_>>() != b.iter().collect::<BTreeSet<_>>())
        .count();
    Ok(100.0 * misses as f64 / true_sets.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingStats {
    pub mean_ms: f64,
    pub median_ms: f64,
    pub runs: usize,
}

impl TimingStats {
    pub fn from_samples(ms: &[f64]) -> Result<Self> {
        if ms.is_empty() {
            return Err(Error::InvalidArgument("no timing samples".into()));
        }
        let mut sorted = ms.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mid = sorted.len() / 2;
        let median_ms = if sorted.len() % 2 == 1 { sorted[mid] } else { 0.5 * (sorted[mid - 1] + sorted[mid]) };
        Ok(Self { mean_ms: ms.iter().sum::<f64>() / ms.len() as f64, median_ms, runs: ms.len() })
    }
}

/// Times `f` on one rayon thread: `warmup` untimed calls, then `runs` timed ones.
pub fn time_ms<T>(warmup: usize, runs: usize, mut f: impl FnMut() -> T + Send) -> Result<Vec<f64>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("timing pool: {e}")))?;
    Ok(pool.install(|| {
        for _ in 0..warmup {
            std::hint::black_box(f());
        }
        (0..runs)
            .map(|_| {
                let t = Instant::now();
                std::hint::black_box(f());
                t.elapsed().as_secs_f64() * 1e3
            })
            .collect()
    }))
}

/// Per-REM preprocessing and forward time of one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub method: String,
    pub preprocessing: TimingStats,
    pub forward: TimingStats,
    pub total: TimingStats,
}

impl TimingRow {
    /// `pre[i]` and `fwd[i]` belong to the same run.
    pub fn from_runs(method: impl Into<String>, pre: &[f64], fwd: &[f64]) -> Result<Self> {
        if pre.len() != fwd.len() {
            return Err(Error::ShapeMismatch("stage sample counts differ".into()));
        }
        let total: Vec<f64> = pre.iter().zip(fwd).map(|(a, b)| a + b).collect();
        Ok(Self {
            method: method.into(),
            preprocessing: TimingStats::from_samples(pre)?,
            forward: TimingStats::from_samples(fwd)?,
            total: TimingStats::from_samples(&total)?,
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub rows: Vec<TimingRow>,
}

impl TimingReport {
    pub fn row(&self, method: &str) -> Option<&TimingRow> {
        self.rows.iter().find(|r| r.method == method)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "method,preprocessing_mean_ms,preprocessing_median_ms,forward_mean_ms,forward_median_ms,total_mean_ms,total_median_ms,runs\n",
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{}",
                r.method,
                r.preprocessing.mean_ms,
                r.preprocessing.median_ms,
                r.forward.mean_ms,
                r.forward.median_ms,
                r.total.mean_ms,
                r.total.median_ms,
                r.total.runs
            );
        }
        s
    }

    pub fn to_table(&self) -> String {
        let mut s = format!("{:<28} {:>14} {:>12} {:>12}\n", "method", "preproc ms", "forward ms", "total ms");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<28} {:>14.3} {:>12.3} {:>12.3}",
                r.method, r.preprocessing.mean_ms, r.forward.mean_ms, r.total.mean_ms
            );
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapScore {
    pub map_id: String,
    pub tx_index: usize,
    pub rmse: f64,
    pub rmse_challenge: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rmse: f64,
    pub rmse_challenge: f64,
    pub samples: usize,
    pub per_map: Vec<MapScore>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timing: Option<TimingReport>,
}

impl EvalReport {
    /// Scores normalized targets against predictions; `ids` labels each pair.
    pub fn score(
        ids: Vec<(String, usize)>,
        ys: &[Grid<f64>],
        yhats: &[Grid<f64>],
        buildings: &[Grid<u8>],
    ) -> Result<Self> {
        let rmse = rmse_full(ys, yhats)?;
        let rmse_challenge = rmse_challenge(ys, yhats, buildings)?;
        if ids.len() != ys.len() {
            return Err(Error::ShapeMismatch("one id per map required".into()));
        }
        let mut per_map = Vec::with_capacity(ys.len());
        for (i, (map_id, tx_index)) in ids.into_iter().enumerate() {
            per_map.push(MapScore {
                map_id,
                tx_index,
                rmse: rmse_full(from_ref(&ys[i]), from_ref(&yhats[i]))?,
                rmse_challenge: self::rmse_challenge(from_ref(&ys[i]), from_ref(&yhats[i]), from_ref(&buildings[i]))?,
            });
        }
        Ok(Self { rmse, rmse_challenge, samples: ys.len(), per_map, timing: None })
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("map_id,tx_index,rmse,rmse_challenge\n");
        for m in &self.per_map {
            let _ = writeln!(s, "{},{},{},{}", m.map_id, m.tx_index, m.rmse, m.rmse_challenge);
        }
        let _ = writeln!(s, "ALL,,{},{}", self.rmse, self.rmse_challenge);
        s
    }

    pub fn to_table(&self) -> String {
        let mut s = format!(
            "samples {}\nnormalized RMSE {:.6}\nchallenge RMSE  {:.6}\n",
            self.samples, self.rmse, self.rmse_challenge
        );
        if let Some(t) = &self.timing {
            s.push_str(&t.to_table());
        }
        s
    }
}
