//! Quick randomized property suites behind the `check` command.

use std::str::FromStr;

use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::composition::{apply_a, apply_b, symplectic_form, Direction, SpaceDiffeo, TimeShift};
use crate::decay::{DecayKind, VarCoeffOperator};
use crate::driver::{default_omega_bar, Schedule};
use crate::kam::{homological_residual, homological_solve, kuksin_solve, reduce_step, DiagonalModel, ReductionState};
use crate::spectral::{FourierField, NormParams, Truncation};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    Norms,
    Composition,
    Reduction,
    All,
}

impl FromStr for Suite {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "norms" => Ok(Suite::Norms),
            "composition" => Ok(Suite::Composition),
            "reduction" => Ok(Suite::Reduction),
            "all" => Ok(Suite::All),
            other => Err(format!("unknown suite {other:?}")),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CheckResult {
    pub suite: &'static str,
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

fn res(suite: &'static str, name: &'static str, pass: bool, detail: String) -> CheckResult {
    CheckResult { suite, name, pass, detail }
}

pub fn run_suite(suite: Suite, seed: u64) -> Vec<CheckResult> {
    match suite {
        Suite::Norms => norms(seed),
        Suite::Composition => composition(seed),
        Suite::Reduction => reduction(seed),
        Suite::All => [norms(seed), composition(seed), reduction(seed)].concat(),
    }
}

fn omega() -> Vec<f64> {
    default_omega_bar(2).iter().map(|w| 1.1 * w).collect()
}

fn grid_sup(f: &FourierField) -> f64 {
    f.dealias_values().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

fn norms(seed: u64) -> Vec<CheckResult> {
    let tr = Truncation::new(2, 8, 16);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();

    let (mut lo, mut hi) = (0.0f64, 0.0f64);
    for _ in 0..50 {
        let s = rng.gen_range(0.0..0.5);
        let p = rng.gen_range(1.0..3.0);
        let decay = rng.gen_range(0.0..1.0);
        let u = FourierField::random(&tr, &mut rng, 1.0, decay, true, false);
        let f = u.norm_frak(&NormParams { s, p, s0: 0 });
        let m = u.norm_sp(&NormParams { s, p: 2.0 * p, s0: 0 });
        let f2 = u.norm_frak(&NormParams { s, p: 2.0 * p, s0: 0 });
        lo = lo.max(f / m);
        hi = hi.max(m / (2f64.powf(p) * f2));
    }
    out.push(res("norms", "sandwich", lo <= 1.0 + 1e-12 && hi <= 1.0 + 1e-12, format!("max ratios {lo:.3}, {hi:.3}")));

    let mut worst = 0.0f64;
    for _ in 0..50 {
        let s = rng.gen_range(0.05..0.5);
        let sigma: f64 = rng.gen_range(0.01..s);
        let p = rng.gen_range(0.0..2.0);
        let nu = rng.gen_range(0.5..3.0);
        let decay = rng.gen_range(0.0..1.0);
        let u = FourierField::random(&tr, &mut rng, 1.0, decay, true, false);
        let c = (2.0 * sigma).exp() * (nu / (std::f64::consts::E * sigma)).powf(nu);
        let lhs = u.norm_sp(&NormParams { s: s - sigma, p: p + nu, s0: 0 });
        worst = worst.max(lhs / (c * u.norm_sp(&NormParams { s, p, s0: 0 })));
    }
    out.push(res("norms", "smoothing", worst <= 1.0 + 1e-12, format!("max ratio {worst:.3}")));

    let np = NormParams { s: 0.1, p: 2.0, s0: 2 };
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let u = FourierField::random(&tr, &mut rng, 1.0, 0.5, true, false);
        let v = FourierField::random(&tr, &mut rng, 1.0, 0.5, true, false);
        worst = worst.max(u.mul(&v).norm_sp(&np) / (u.norm_sp(&np) * v.norm_sp(&np)));
    }
    let sum: f64 = (0..tr.nt())
        .flat_map(|t| (-(tr.kx as i32)..=tr.kx as i32).map(move |k| (t, k)))
        .map(|(t, k)| (tr.bracket(t) + (k.unsigned_abs() as f64).max(1.0)).powf(-2.0 * np.p))
        .sum();
    let bound = 2.0 * 2f64.powf(np.p - 1.0).max(1.0) * sum.sqrt();
    out.push(res("norms", "field algebra", worst <= bound, format!("measured {worst:.3e}, bound {bound:.3e}")));

    let small = Truncation::new(2, 3, 6);
    let id = VarCoeffOperator::identity(&small).decay_norm(DecayKind::Plain, &NormParams { s: 0.0, p: 0.0, s0: 0 });
    out.push(res("norms", "identity decay norm", (id - 1.0).abs() < 1e-15, format!("{id}")));
    out
}

fn composition(seed: u64) -> Vec<CheckResult> {
    let tr = Truncation::new(2, 6, 12);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let (mut trip, mut symp) = (0.0f64, 0.0f64);
    for _ in 0..10 {
        let raw = FourierField::random(&tr, &mut rng, 1.0, 2.0, true, false);
        let beta = raw.scale(rng.gen_range(1e-3..1e-2) / grid_sup(&raw));
        let d = match SpaceDiffeo::new(beta) {
            Ok(d) => d,
            Err(e) => return vec![res("composition", "diffeo", false, e.to_string())],
        };
        let u = FourierField::random(&tr, &mut rng, 1.0, 3.0, true, true);
        let v = FourierField::random(&tr, &mut rng, 1.0, 3.0, true, true);
        let au = apply_a(&d, &u, Direction::Forward);
        let av = apply_a(&d, &v, Direction::Forward);
        trip = trip.max(grid_sup(&(&apply_a(&d, &au, Direction::Inverse) - &u)));
        let w = (&symplectic_form(&au, &av).unwrap() - &symplectic_form(&u, &v).unwrap()).max_coeff();
        symp = symp.max(w);
    }
    out.push(res("composition", "space round trip", trip <= 1e-10, format!("{trip:.2e}")));
    out.push(res("composition", "symplecticity", symp <= 1e-10, format!("{symp:.2e}")));

    let mut worst = 0.0f64;
    for _ in 0..5 {
        let mut a = FourierField::random(&tr, &mut rng, 1.0, 4.0, true, false).x_average();
        a.set(&vec![0; tr.v], 0, C64::new(0.0, 0.0));
        let a = a.scale(rng.gen_range(1e-4..1e-3) / grid_sup(&a).max(1e-300));
        let ts = match TimeShift::new(a, &omega()) {
            Ok(t) => t,
            Err(e) => return [out, vec![res("composition", "time shift", false, e.to_string())]].concat(),
        };
        let h = FourierField::random(&tr, &mut rng, 1.0, 3.0, true, false);
        let back = apply_b(&ts, &apply_b(&ts, &h, Direction::Forward), Direction::Inverse);
        worst = worst.max(grid_sup(&(&back - &h)));
    }
    out.push(res("composition", "time round trip", worst <= 1e-10, format!("{worst:.2e}")));
    out
}

fn reduction(seed: u64) -> Vec<CheckResult> {
    let tr = Truncation::new(2, 4, 8);
    let w = omega();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();

    let nt = tr.nt();
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let d: f64 = rng.gen_range(2.0..30.0);
        let mut mu: Vec<C64> = (0..nt)
            .map(|t| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)) * 0.05 * d * (-(tr.l1(t) as f64)).exp())
            .collect();
        mu[tr.zero_index()] = C64::new(0.0, 0.0);
        let p: Vec<C64> = (0..nt).map(|_| C64::new(rng.gen_range(-1.0..1.0), 0.0)).collect();
        match kuksin_solve(&tr, d, &mu, &p, &w, 1e-8, 1.2) {
            Ok(s) => worst = worst.max(s.residual),
            Err(e) => {
                out.push(res("reduction", "Kuksin residual", false, e.to_string()));
                worst = f64::INFINITY;
                break;
            }
        }
    }
    if worst.is_finite() {
        out.push(res("reduction", "Kuksin residual", worst <= 1e-10, format!("{worst:.2e}")));
    }

    let sched = Schedule::new(1e-4, 0.1, 5e-3, 1.2, 2, 2).expect("fixed schedule");
    let r = VarCoeffOperator::random(&tr, &mut rng, 1e-3, 1.0);
    let dm = DiagonalModel::unperturbed(&tr, 1.0);
    match homological_solve(&dm, &r, &w, sched.alpha_mn(1, 2), sched.tau()) {
        Ok(phi) => {
            let h = homological_residual(&dm, &r, &phi, &w);
            let rn = r.decay_norm(DecayKind::Plain, &NormParams { s: 0.0, p: 0.0, s0: 0 });
            out.push(res("reduction", "homological residual", h <= 1e-9 * rn, format!("{:.2e} relative", h / rn)));
        }
        Err(e) => out.push(res("reduction", "homological residual", false, e.to_string())),
    }

    let mut st = ReductionState::from_parts(dm, r, &w, NormParams { s: 0.1, p: 0.0, s0: 2 });
    let mut norms = vec![st.remainder_norm()];
    for _ in 0..2 {
        match reduce_step(&st, &sched, 2) {
            Ok((next, _)) => {
                norms.push(next.remainder_norm());
                st = next;
            }
            Err(e) => {
                out.push(res("reduction", "contraction", false, e.to_string()));
                return out;
            }
        }
    }
    let ok = norms.windows(2).all(|p| p[1] < p[0]);
    let seq: Vec<String> = norms.iter().map(|x| format!("{x:.2e}")).collect();
    out.push(res("reduction", "contraction", ok, seq.join(" -> ")));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suites_pass() {
        for r in run_suite(Suite::All, 7) {
            assert!(r.pass, "{} / {}: {}", r.suite, r.name, r.detail);
        }
    }

    #[test]
    fn suite_names() {
        assert_eq!("all".parse::<Suite>().unwrap(), Suite::All);
        assert!("bogus".parse::<Suite>().is_err());
    }
}
