//! Non-resonance checks on the parameter `lambda` and empirical measure of
//! the excluded set.
//!
//! Thresholds use `[l] = max(|l|_1, 1)` throughout. Eigenvalues enter as
//! `(k, d_k)` pairs so the checks do not depend on how they were produced.

use std::fmt;

use serde::{Deserialize, Serialize};

/// Which non-resonance condition a record violates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResonanceKind {
    /// `|omega . l|`
    Zeroth,
    /// `|omega . l + d_k|`
    First,
    /// `|omega . l + d_i - d_j|`
    Second,
}

/// A failed small-divisor bound.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResonanceRecord {
    pub kind: ResonanceKind,
    pub i: i32,
    pub j: i32,
    pub ell: Vec<i32>,
    pub divisor: f64,
    pub threshold: f64,
    /// Excluded `lambda` interval, treating `d` as frozen.
    pub interval: Option<(f64, f64)>,
}

impl ResonanceRecord {
    pub fn zeroth(ell: Vec<i32>, divisor: f64, threshold: f64) -> Self {
        ResonanceRecord { kind: ResonanceKind::Zeroth, i: 0, j: 0, ell, divisor, threshold, interval: None }
    }

    pub fn first(ell: Vec<i32>, k: i32, divisor: f64, threshold: f64) -> Self {
        ResonanceRecord { kind: ResonanceKind::First, i: k, j: 0, ell, divisor, threshold, interval: None }
    }

    pub fn second(ell: Vec<i32>, i: i32, j: i32, divisor: f64, threshold: f64) -> Self {
        ResonanceRecord { kind: ResonanceKind::Second, i, j, ell, divisor, threshold, interval: None }
    }

    /// Fills `interval` from the divisor `lambda * slope + c` observed at `lambda`.
    pub fn with_interval(mut self, lambda: f64, slope: f64) -> Self {
        if slope != 0.0 {
            let c = self.divisor - lambda * slope;
            let a = (-c - self.threshold) / slope;
            let b = (-c + self.threshold) / slope;
            self.interval = Some((a.min(b), a.max(b)));
        }
        self
    }

    fn key(&self) -> (ResonanceKind, i32, i32, Vec<i32>) {
        (self.kind, self.i, self.j, self.ell.clone())
    }
}

impl fmt::Display for ResonanceRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.kind {
            ResonanceKind::Zeroth => "zeroth",
            ResonanceKind::First => "first",
            ResonanceKind::Second => "second",
        };
        write!(
            f,
            "{kind} Melnikov at i={}, j={}, l={:?}: |divisor| = {:.3e} < {:.3e}",
            self.i,
            self.j,
            self.ell,
            self.divisor.abs(),
            self.threshold
        )?;
        if let Some((a, b)) = self.interval {
            write!(f, ", excluded lambda in [{a:.6}, {b:.6}]")?;
        }
        Ok(())
    }
}

/// All `l` in `Z^v` with `|l|_1 <= max_l`, ordered by `|l|_1`, then lexicographically.
pub fn ell_ball(v: usize, max_l: u32) -> Vec<Vec<i32>> {
    fn rec(v: usize, budget: i32, exact: bool, cur: &mut Vec<i32>, out: &mut Vec<Vec<i32>>) {
        if cur.len() == v {
            if !exact || budget == 0 {
                out.push(cur.clone());
            }
            return;
        }
        for x in -budget..=budget {
            cur.push(x);
            rec(v, budget - x.abs(), exact, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    for n in 0..=max_l as i32 {
        rec(v, n, true, &mut Vec::with_capacity(v), &mut out);
    }
    out
}

fn l1(ell: &[i32]) -> i32 {
    ell.iter().map(|x| x.abs()).sum()
}

fn bracket(ell: &[i32]) -> f64 {
    l1(ell).max(1) as f64
}

fn dot(w: &[f64], ell: &[i32]) -> f64 {
    w.iter().zip(ell).map(|(a, &b)| a * b as f64).sum()
}

fn norm2(w: &[f64]) -> f64 {
    w.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DiophantineReport {
    pub pass: bool,
    /// Minimizer of `|omega . l| |l|^tau` (first nonzero entry positive).
    pub worst_ell: Option<Vec<i32>>,
    /// `min |omega . l| |l|^tau`, the largest admissible `alpha0`.
    pub max_alpha: f64,
}

/// Checks `|omega . l| >= alpha0 / |l|^tau0` for `0 < |l|_1 <= max_l`.
pub fn diophantine_check(omega: &[f64], alpha0: f64, tau0: f64, max_l: u32) -> DiophantineReport {
    let mut worst: Option<Vec<i32>> = None;
    let mut min = f64::INFINITY;
    for ell in ell_ball(omega.len(), max_l) {
        let n = l1(&ell);
        if n == 0 || ell.iter().find(|&&x| x != 0).is_some_and(|&x| x < 0) {
            continue;
        }
        let val = dot(omega, &ell).abs() * (n as f64).powf(tau0);
        if val < min {
            min = val;
            worst = Some(ell);
        }
    }
    DiophantineReport { pass: min >= alpha0, worst_ell: worst, max_alpha: min }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct MelnikovReport {
    pub pass: bool,
    pub records: Vec<ResonanceRecord>,
}

impl MelnikovReport {
    /// Record with the smallest ratio `|divisor| / threshold`.
    pub fn worst(&self) -> Option<&ResonanceRecord> {
        self.records
            .iter()
            .min_by(|a, b| (a.divisor.abs() / a.threshold).total_cmp(&(b.divisor.abs() / b.threshold)))
    }

    fn merge(mut self, o: MelnikovReport) -> Self {
        self.pass &= o.pass;
        self.records.extend(o.records);
        self
    }
}

/// `|lambda omega_bar . l + d_k| >= alpha |k|^5 / [l]^tau` for `|l|_1 <= max_l`.
pub fn melnikov_first(
    lambda: f64,
    omega_bar: &[f64],
    d: &[(i32, f64)],
    alpha: f64,
    tau: f64,
    max_l: u32,
) -> MelnikovReport {
    let mut rep = MelnikovReport { pass: true, records: Vec::new() };
    for ell in ell_ball(omega_bar.len(), max_l) {
        let slope = dot(omega_bar, &ell);
        let br = bracket(&ell).powf(tau);
        for &(k, dk) in d {
            let div = lambda * slope + dk;
            let thr = alpha * (k as f64).abs().powi(5) / br;
            if div.abs() < thr {
                rep.pass = false;
                rep.records.push(ResonanceRecord::first(ell.clone(), k, div, thr).with_interval(lambda, slope));
            }
        }
    }
    rep
}

/// Whether `(i, j, l)` lies in the ball outside of which the second
/// condition holds automatically.
pub fn in_resonance_ball(omega_bar: &[f64], i: i32, j: i32, ell: &[i32]) -> bool {
    let (fi, fj) = (i as f64, j as f64);
    fi.powi(4) + fj.powi(4) <= 16.0 * norm2(omega_bar) * l1(ell) as f64
}

/// `|lambda omega_bar . l + d_i - d_j| >= alpha |i^5 - j^5| / [l]^tau` for
/// `i != j` inside the resonance ball.
pub fn melnikov_second(
    lambda: f64,
    omega_bar: &[f64],
    d: &[(i32, f64)],
    alpha: f64,
    tau: f64,
    max_l: u32,
) -> MelnikovReport {
    melnikov_second_impl(lambda, omega_bar, d, alpha, tau, max_l, true)
}

/// Same check over every pair, ignoring the ball.
pub fn melnikov_second_exhaustive(
    lambda: f64,
    omega_bar: &[f64],
    d: &[(i32, f64)],
    alpha: f64,
    tau: f64,
    max_l: u32,
) -> MelnikovReport {
    melnikov_second_impl(lambda, omega_bar, d, alpha, tau, max_l, false)
}

fn melnikov_second_impl(
    lambda: f64,
    omega_bar: &[f64],
    d: &[(i32, f64)],
    alpha: f64,
    tau: f64,
    max_l: u32,
    ball: bool,
) -> MelnikovReport {
    let mut rep = MelnikovReport { pass: true, records: Vec::new() };
    for ell in ell_ball(omega_bar.len(), max_l) {
        let slope = dot(omega_bar, &ell);
        let br = bracket(&ell).powf(tau);
        for &(i, di) in d {
            for &(j, dj) in d {
                if i == j || (ball && !in_resonance_ball(omega_bar, i, j, &ell)) {
                    continue;
                }
                let div = lambda * slope + di - dj;
                let thr = alpha * ((i as f64).powi(5) - (j as f64).powi(5)).abs() / br;
                if div.abs() < thr {
                    rep.pass = false;
                    rep.records.push(ResonanceRecord::second(ell.clone(), i, j, div, thr).with_interval(lambda, slope));
                }
            }
        }
    }
    rep
}

/// Thresholds applied at every grid point.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SieveParams {
    pub omega_bar: Vec<f64>,
    /// Threshold constant of the first condition.
    pub alpha_first: f64,
    /// Threshold constant of the second condition.
    pub alpha_second: f64,
    pub tau: f64,
    pub max_l: u32,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GridPoint {
    pub lambda: f64,
    pub pass: bool,
    pub worst: Option<ResonanceRecord>,
}

/// One maximal run of consecutive grid points excluded by the same triple.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExcludedRun {
    pub kind: ResonanceKind,
    pub i: i32,
    pub j: i32,
    pub ell: Vec<i32>,
    pub lambda_start: f64,
    pub lambda_end: f64,
    /// Number of points times the grid step.
    pub width: f64,
    /// `9 alpha / [l]^tau`.
    pub bound: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MeasureReport {
    pub params: SieveParams,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub step: f64,
    pub excluded_fraction: f64,
    pub points: Vec<GridPoint>,
    pub runs: Vec<ExcludedRun>,
}

impl MeasureReport {
    /// Runs whose width exceeds `bound + step`.
    pub fn width_violations(&self) -> Vec<&ExcludedRun> {
        self.runs.iter().filter(|r| r.width > r.bound + self.step).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("measure report serializes")
    }
}

/// Sweeps a uniform grid of `n` points on `[lambda_min, lambda_max]`;
/// `diag(lambda)` supplies the `(k, d_k)` pairs at each point.
pub fn measure_estimate(
    params: &SieveParams,
    lambda_min: f64,
    lambda_max: f64,
    n: usize,
    diag: impl Fn(f64) -> Vec<(i32, f64)>,
) -> MeasureReport {
    use std::collections::BTreeMap;
    let step = if n > 1 { (lambda_max - lambda_min) / (n - 1) as f64 } else { 0.0 };
    let mut points = Vec::with_capacity(n);
    let mut hits: BTreeMap<(ResonanceKind, i32, i32, Vec<i32>), (f64, Vec<usize>)> = BTreeMap::new();
    let mut excluded = 0usize;
    for idx in 0..n {
        let lambda = lambda_min + idx as f64 * step;
        let d = diag(lambda);
        let p = &params;
        let rep = melnikov_first(lambda, &p.omega_bar, &d, p.alpha_first, p.tau, p.max_l)
            .merge(melnikov_second(lambda, &p.omega_bar, &d, p.alpha_second, p.tau, p.max_l));
        if !rep.pass {
            excluded += 1;
        }
        for r in &rep.records {
            let alpha = if r.kind == ResonanceKind::First { p.alpha_first } else { p.alpha_second };
            let e = hits.entry(r.key()).or_insert_with(|| (9.0 * alpha / bracket(&r.ell).powf(p.tau), Vec::new()));
            e.1.push(idx);
        }
        points.push(GridPoint { lambda, pass: rep.pass, worst: rep.worst().cloned() });
    }
    let mut runs = Vec::new();
    for ((kind, i, j, ell), (bound, idxs)) in hits {
        let mut start = 0;
        for q in 1..=idxs.len() {
            if q == idxs.len() || idxs[q] != idxs[q - 1] + 1 {
                let (a, b) = (idxs[start], idxs[q - 1]);
                runs.push(ExcludedRun {
                    kind,
                    i,
                    j,
                    ell: ell.clone(),
                    lambda_start: lambda_min + a as f64 * step,
                    lambda_end: lambda_min + b as f64 * step,
                    width: (b - a + 1) as f64 * step,
                    bound,
                });
                start = q;
            }
        }
    }
    MeasureReport {
        params: params.clone(),
        lambda_min,
        lambda_max,
        step,
        excluded_fraction: if n > 0 { excluded as f64 / n as f64 } else { 0.0 },
        points,
        runs,
    }
}

/// `(k, k^5)` for `0 < |k| <= kx`.
pub fn unperturbed_eigenvalues(kx: usize) -> Vec<(i32, f64)> {
    let kx = kx as i32;
    (-kx..=kx).filter(|&k| k != 0).map(|k| (k, (k as f64).powi(5))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn golden() -> Vec<f64> {
        vec![1.0, 0.5 * (1.0 + 5f64.sqrt())]
    }

    #[test]
    fn ball_enumeration_counts() {
        assert_eq!(ell_ball(2, 0), vec![vec![0, 0]]);
        // 2n^2 + 2n + 1 points in the l1 ball of radius n in Z^2
        assert_eq!(ell_ball(2, 8).len(), 145);
        assert_eq!(ell_ball(3, 2).len(), 25);
    }

    #[test]
    fn diophantine_brute_force() {
        let w = golden();
        let mut min = f64::INFINITY;
        for a in -100i32..=100 {
            for b in -100i32..=100 {
                let n = a.abs() + b.abs();
                if n == 0 || n > 100 {
                    continue;
                }
                min = min.min((a as f64 + b as f64 * w[1]).abs() * (n as f64).powf(1.2));
            }
        }
        let rep = diophantine_check(&w, 0.9 * min, 1.2, 100);
        assert!(rep.pass);
        assert_eq!(rep.max_alpha, min);
        assert!(!diophantine_check(&w, 1.01 * min, 1.2, 100).pass);
    }

    #[test]
    fn rational_frequency_fails() {
        let rep = diophantine_check(&[1.0, 0.5], 1e-6, 1.2, 10);
        assert!(!rep.pass);
        assert_eq!(rep.worst_ell, Some(vec![1, -2]));
        let vac = diophantine_check(&golden(), 1e9, 1.2, 0);
        assert!(vac.pass && vac.worst_ell.is_none());
    }

    #[test]
    fn engineered_first_resonance() {
        let w = golden();
        // lambda omega . l = -d_{-1} with l = (0, 1)
        let lambda = 1.0 / w[1];
        let d = unperturbed_eigenvalues(3);
        let rep = melnikov_first(lambda, &w, &d, 1e-3, 4.0, 4);
        assert!(!rep.pass);
        let r = rep.records.iter().find(|r| r.i == -1 && r.ell == [0, 1]).unwrap();
        assert!(r.divisor.abs() < 1e-12);
        let (a, b) = r.interval.unwrap();
        assert!(a < lambda && lambda < b);
    }

    #[test]
    fn engineered_second_resonance() {
        let w = golden();
        let d = unperturbed_eigenvalues(3);
        // lambda omega . l = d_1 - d_2 = -31 with l = (-10, -8)
        let ell = [-10, -8];
        let lambda = -31.0 / dot(&w, &ell);
        assert!((0.5..=1.5).contains(&lambda));
        let rep = melnikov_second(lambda, &w, &d, 1e-3, 4.0, 18);
        assert!(rep.records.iter().any(|r| r.i == 2 && r.j == 1 && r.ell == ell));
        let r = rep.records.iter().find(|r| r.i == 2 && r.j == 1 && r.ell == ell).unwrap();
        assert!(r.divisor.abs() < 1e-12);
    }

    #[test]
    fn second_condition_skips_diagonal() {
        let d = vec![(1, 1.0)];
        let rep = melnikov_second(1.0, &golden(), &d, 1.0, 4.0, 3);
        assert!(rep.pass && rep.records.is_empty());
    }

    #[test]
    fn ball_restriction_is_sound() {
        let w = golden();
        let d = unperturbed_eigenvalues(4);
        for q in 0..200 {
            let lambda = 0.5 + q as f64 / 199.0;
            let rep = melnikov_second_exhaustive(lambda, &w, &d, 5e-3, 4.0, 8);
            for r in &rep.records {
                let (i, j) = (r.i as f64, r.j as f64);
                assert!(i.powi(4) + j.powi(4) <= 16.0 * norm2(&w) * l1(&r.ell) as f64 + 1.0, "{r}");
            }
        }
    }

    #[test]
    fn empty_model_excludes_nothing() {
        let p = SieveParams { omega_bar: golden(), alpha_first: 0.1, alpha_second: 0.1, tau: 4.0, max_l: 8 };
        let rep = measure_estimate(&p, 0.5, 1.5, 100, |_| Vec::new());
        assert_eq!(rep.excluded_fraction, 0.0);
        assert!(rep.runs.is_empty());
    }

    #[test]
    fn record_json_roundtrip() {
        let r = ResonanceRecord::second(vec![1, -3], 2, -1, 1e-4, 2e-3).with_interval(1.1, 2.3);
        let s = serde_json::to_string(&r).unwrap();
        assert_eq!(serde_json::from_str::<ResonanceRecord>(&s).unwrap(), r);
    }
}
