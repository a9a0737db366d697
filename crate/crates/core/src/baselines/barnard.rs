//! Barnard's exact unconditional test for a one-sided 2x2 comparison and
//! the (invalid) procedure that re-runs it after every trial.

use crate::error::{Error, Result};
use crate::exec::Exec;

/// Tables whose statistics differ by less than this count as ties.
const TIE_TOL: f64 = 1e-10;
/// Smallest nuisance grid accepted.
pub const MIN_NUISANCE_GRID: usize = 33;
/// Grid used by the naive sequential procedure (three times the common
/// default of 33).
pub const NAIVE_NUISANCE_GRID: usize = 99;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ContingencyTable {
    pub n: u32,
    pub s0: u32,
    pub s1: u32,
}

impl ContingencyTable {
    pub fn new(n: u32, s0: u32, s1: u32) -> Result<Self> {
        if n == 0 {
            return Err(Error::domain("table needs at least one trial per policy"));
        }
        if s0 > n || s1 > n {
            return Err(Error::domain(format!("counts ({s0}, {s1}) exceed n = {n}")));
        }
        Ok(ContingencyTable { n, s0, s1 })
    }
}

/// Pooled Wald statistic `(p1_hat - p0_hat) / sqrt(pbar (1 - pbar) 2 / n)`,
/// zero when the pooled rate is 0 or 1.
pub fn wald_statistic(n: u32, a0: u32, a1: u32) -> f64 {
    let nf = f64::from(n);
    let pooled = f64::from(a0 + a1) / (2.0 * nf);
    if pooled <= 0.0 || pooled >= 1.0 {
        return 0.0;
    }
    let diff = f64::from(a1) / nf - f64::from(a0) / nf;
    diff / (pooled * (1.0 - pooled) * 2.0 / nf).sqrt()
}

/// `size` points evenly spaced on the closed interval `[0, 1]`.
pub fn nuisance_grid(size: usize) -> Result<Vec<f64>> {
    if size < MIN_NUISANCE_GRID {
        return Err(Error::domain(format!(
            "nuisance grid size {size} is below {MIN_NUISANCE_GRID}"
        )));
    }
    let last = (size - 1) as f64;
    Ok((0..size).map(|i| i as f64 / last).collect())
}

fn binomial_pmf(n: u32, p: f64, ln_fact: &[f64]) -> Vec<f64> {
    let n = n as usize;
    if p <= 0.0 {
        let mut v = vec![0.0; n + 1];
        v[0] = 1.0;
        return v;
    }
    if p >= 1.0 {
        let mut v = vec![0.0; n + 1];
        v[n] = 1.0;
        return v;
    }
    let (lp, lq) = (p.ln(), (-p).ln_1p());
    (0..=n)
        .map(|k| (ln_fact[n] - ln_fact[k] - ln_fact[n - k] + k as f64 * lp + (n - k) as f64 * lq).exp())
        .collect()
}

fn ln_factorials(n: u32) -> Vec<f64> {
    let mut v = Vec::with_capacity(n as usize + 1);
    let mut acc = 0.0;
    v.push(0.0);
    for k in 1..=n {
        acc += f64::from(k).ln();
        v.push(acc);
    }
    v
}

/// One-sided p-value: the largest probability over the nuisance grid of a
/// table at least as extreme as `table`.
pub fn barnard_p_value(table: ContingencyTable, nuisance_grid_size: usize) -> Result<f64> {
    let grid = nuisance_grid(nuisance_grid_size)?;
    let n = table.n;
    let t_obs = wald_statistic(n, table.s0, table.s1);
    let extreme: Vec<(usize, usize)> = (0..=n)
        .flat_map(|a| (0..=n).map(move |b| (a, b)))
        .filter(|&(a, b)| wald_statistic(n, a, b) >= t_obs - TIE_TOL)
        .map(|(a, b)| (a as usize, b as usize))
        .collect();
    let ln_fact = ln_factorials(n);
    let mut best: f64 = 0.0;
    for &p in &grid {
        let pmf = binomial_pmf(n, p, &ln_fact);
        let tail: f64 = extreme.iter().map(|&(a, b)| pmf[a] * pmf[b]).sum();
        best = best.max(tail);
    }
    Ok(best.min(1.0))
}

/// p-values of every table at one `n`, computed together: tables are
/// sorted by statistic once, and each nuisance value needs one pass of
/// cumulative sums.
#[derive(Clone, Debug, PartialEq)]
pub struct BarnardTable {
    n: u32,
    /// row-major over `(s0, s1)`
    p_values: Vec<f64>,
}

impl BarnardTable {
    pub fn new(n: u32, nuisance_grid_size: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::domain("table needs at least one trial per policy"));
        }
        let grid = nuisance_grid(nuisance_grid_size)?;
        let side = n as usize + 1;
        let mut order: Vec<(f64, usize)> = (0..side * side)
            .map(|k| (wald_statistic(n, (k / side) as u32, (k % side) as u32), k))
            .collect();
        order.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)));
        // tail_end[r]: number of sorted tables with statistic >= T_r - tol
        let stats: Vec<f64> = order.iter().map(|o| o.0).collect();
        let tail_end: Vec<usize> = stats
            .iter()
            .map(|&t| stats.partition_point(|&s| s >= t - TIE_TOL))
            .collect();
        let ln_fact = ln_factorials(n);
        let mut p_values = vec![0.0f64; side * side];
        let mut cum = vec![0.0; side * side + 1];
        for &p in &grid {
            let pmf = binomial_pmf(n, p, &ln_fact);
            for (r, &(_, k)) in order.iter().enumerate() {
                cum[r + 1] = cum[r] + pmf[k / side] * pmf[k % side];
            }
            for (r, &(_, k)) in order.iter().enumerate() {
                p_values[k] = p_values[k].max(cum[tail_end[r]]);
            }
        }
        p_values.iter_mut().for_each(|v| *v = v.min(1.0));
        Ok(BarnardTable { n, p_values })
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn p_value(&self, s0: u32, s1: u32) -> f64 {
        self.p_values[s0 as usize * (self.n as usize + 1) + s1 as usize]
    }
}

/// Precomputed tables for running Barnard's test after every trial.
///
/// This procedure does NOT control the Type-I error; it exists to show
/// the inflation caused by repeated looks.
#[derive(Clone, Debug)]
pub struct NaiveBatch {
    tables: Vec<BarnardTable>,
}

impl NaiveBatch {
    pub fn new(n_max: u32, nuisance_grid_size: usize, exec: Exec) -> Result<Self> {
        nuisance_grid(nuisance_grid_size)?;
        let tables = exec
            .map_range(n_max as usize, |k| BarnardTable::new(k as u32 + 1, nuisance_grid_size))
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        Ok(NaiveBatch { tables })
    }

    pub fn n_max(&self) -> u32 {
        self.tables.len() as u32
    }

    pub fn p_value(&self, n: u32, s0: u32, s1: u32) -> f64 {
        self.tables[n as usize - 1].p_value(s0, s1)
    }

    /// First prefix length whose p-value falls below `alpha`.
    pub fn first_stop(&self, traj: &[(bool, bool)], alpha: f64) -> Option<u32> {
        let (mut s0, mut s1) = (0, 0);
        for (k, &(z0, z1)) in traj.iter().take(self.tables.len()).enumerate() {
            s0 += u32::from(z0);
            s1 += u32::from(z1);
            if self.tables[k].p_value(s0, s1) < alpha {
                return Some(k as u32 + 1);
            }
        }
        None
    }
}

/// Runs Barnard's test on every prefix of `traj` and reports the first
/// prefix length with p-value below `alpha`.
pub fn naive_batch_sequence(traj: &[(bool, bool)], alpha: f64) -> Result<Option<u32>> {
    if traj.is_empty() {
        return Err(Error::domain("trajectory must be nonempty"));
    }
    let nb = NaiveBatch::new(traj.len() as u32, NAIVE_NUISANCE_GRID, Exec::default())?;
    Ok(nb.first_stop(traj, alpha))
}
