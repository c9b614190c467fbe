//! Truncated Fourier fields on the torus `T^v x T`.
//!
//! A field is `u(phi, x) = sum u_{l,k} e^{i(l.phi + k x)}` over `|l|_1 <= Kphi`
//! and `|k| <= Kx`. Products are computed by collocation on a padded grid
//! and re-truncated, so they equal the truncated convolution exactly.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};
use std::sync::Arc;

use num_complex::Complex64 as C64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{compensated_sum, fft_nd, next_smooth};

pub(crate) const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
pub(crate) const I: C64 = C64 { re: 0.0, im: 1.0 };

/// Mode bookkeeping for a truncation `(v, Kphi, Kx)`.
pub struct Truncation {
    pub v: usize,
    pub kphi: usize,
    pub kx: usize,
    ells: Vec<i32>,
    l1: Vec<u32>,
    neg: Vec<usize>,
    box_index: Vec<u32>,
}

impl fmt::Debug for Truncation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Truncation(v={}, Kphi={}, Kx={})", self.v, self.kphi, self.kx)
    }
}

impl PartialEq for Truncation {
    fn eq(&self, o: &Self) -> bool {
        self.v == o.v && self.kphi == o.kphi && self.kx == o.kx
    }
}

impl Truncation {
    pub fn new(v: usize, kphi: usize, kx: usize) -> Arc<Self> {
        assert!(v >= 1, "at least one torus frequency");
        let side = 2 * kphi + 1;
        let total = side.pow(v as u32);
        let mut ells = Vec::new();
        let mut l1 = Vec::new();
        let mut box_index = vec![u32::MAX; total];
        let mut ell = vec![0i32; v];
        for b in 0..total {
            let mut r = b;
            for j in (0..v).rev() {
                ell[j] = (r % side) as i32 - kphi as i32;
                r /= side;
            }
            let n: u32 = ell.iter().map(|x| x.unsigned_abs()).sum();
            if n as usize <= kphi {
                box_index[b] = l1.len() as u32;
                ells.extend_from_slice(&ell);
                l1.push(n);
            }
        }
        let mut t = Truncation { v, kphi, kx, ells, l1, neg: Vec::new(), box_index };
        let nt = t.nt();
        let neg = (0..nt)
            .map(|i| {
                let m: Vec<i32> = t.ell(i).iter().map(|x| -x).collect();
                t.torus_index(&m).expect("ball is symmetric")
            })
            .collect();
        t.neg = neg;
        Arc::new(t)
    }

    /// Number of retained torus modes.
    pub fn nt(&self) -> usize {
        self.l1.len()
    }

    /// Number of retained space modes `2Kx+1`.
    pub fn nxm(&self) -> usize {
        2 * self.kx + 1
    }

    pub fn len(&self) -> usize {
        self.nt() * self.nxm()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn ell(&self, t: usize) -> &[i32] {
        &self.ells[t * self.v..(t + 1) * self.v]
    }

    /// `|l|_1`.
    pub fn l1(&self, t: usize) -> u32 {
        self.l1[t]
    }

    /// `[l] = max(|l|_1, 1)`.
    pub fn bracket(&self, t: usize) -> f64 {
        self.l1[t].max(1) as f64
    }

    /// Index of `-l`.
    pub fn neg(&self, t: usize) -> usize {
        self.neg[t]
    }

    pub fn zero_index(&self) -> usize {
        self.torus_index(&vec![0; self.v]).unwrap()
    }

    pub fn torus_index(&self, ell: &[i32]) -> Option<usize> {
        if ell.len() != self.v {
            return None;
        }
        let side = 2 * self.kphi as i32 + 1;
        let mut b = 0usize;
        for &e in ell {
            if e.unsigned_abs() as usize > self.kphi {
                return None;
            }
            b = b * side as usize + (e + self.kphi as i32) as usize;
        }
        match self.box_index[b] {
            u32::MAX => None,
            i => Some(i as usize),
        }
    }

    pub fn idx(&self, t: usize, k: i32) -> usize {
        t * self.nxm() + (k + self.kx as i32) as usize
    }

    /// `omega . l` for torus mode `t`.
    pub fn omega_dot(&self, t: usize, omega: &[f64]) -> f64 {
        self.ell(t).iter().zip(omega).map(|(&l, &w)| l as f64 * w).sum()
    }

    /// Dealiasing grid size per torus axis (`> 3 Kphi`).
    pub fn dealias_phi(&self) -> usize {
        if self.kphi == 0 {
            1
        } else {
            next_smooth(3 * self.kphi + 1)
        }
    }

    /// Dealiasing grid size in x (`> 3 Kx`).
    pub fn dealias_x(&self) -> usize {
        if self.kx == 0 {
            1
        } else {
            next_smooth(3 * self.kx + 1)
        }
    }

    pub fn grid_dims(&self, nphi: usize, nx: usize) -> Vec<usize> {
        let mut d = vec![nphi; self.v];
        d.push(nx);
        d
    }

    fn torus_pos(&self, t: usize, n: usize) -> usize {
        let mut p = 0usize;
        for &e in self.ell(t) {
            p = p * n + e.rem_euclid(n as i32) as usize;
        }
        p
    }

    /// Values on the grid `[nphi]^v x [nx]` (row-major, x fastest).
    pub fn to_grid(&self, coeffs: &[C64], nphi: usize, nx: usize) -> Vec<C64> {
        assert!(nphi > 2 * self.kphi && nx > 2 * self.kx, "grid too coarse");
        let ntg = nphi.pow(self.v as u32);
        let mut g = vec![ZERO; ntg * nx];
        for t in 0..self.nt() {
            let base = self.torus_pos(t, nphi) * nx;
            for k in -(self.kx as i32)..=self.kx as i32 {
                g[base + k.rem_euclid(nx as i32) as usize] = coeffs[self.idx(t, k)];
            }
        }
        fft_nd(&mut g, &self.grid_dims(nphi, nx), true);
        g
    }

    /// Coefficients of grid values, truncated to the retained modes.
    pub fn from_grid(&self, mut g: Vec<C64>, nphi: usize, nx: usize) -> Vec<C64> {
        assert!(nphi > 2 * self.kphi && nx > 2 * self.kx, "grid too coarse");
        fft_nd(&mut g, &self.grid_dims(nphi, nx), false);
        let scale = 1.0 / g.len() as f64;
        let mut c = vec![ZERO; self.len()];
        for t in 0..self.nt() {
            let base = self.torus_pos(t, nphi) * nx;
            for k in -(self.kx as i32)..=self.kx as i32 {
                c[self.idx(t, k)] = g[base + k.rem_euclid(nx as i32) as usize] * scale;
            }
        }
        c
    }

    /// Values of a torus series (length `nt`) on the grid `[n]^v`.
    pub fn torus_to_grid(&self, series: &[C64], n: usize) -> Vec<C64> {
        let mut g = vec![ZERO; n.pow(self.v as u32)];
        self.torus_to_grid_into(series, n, &mut g);
        g
    }

    pub(crate) fn torus_to_grid_into(&self, series: &[C64], n: usize, g: &mut [C64]) {
        g.iter_mut().for_each(|z| *z = ZERO);
        for (t, c) in series.iter().enumerate() {
            g[self.torus_pos(t, n)] = *c;
        }
        fft_nd(g, &vec![n; self.v], true);
    }

    /// Truncated torus coefficients of grid values.
    pub fn torus_from_grid(&self, mut g: Vec<C64>, n: usize) -> Vec<C64> {
        let mut out = vec![ZERO; self.nt()];
        self.torus_from_grid_into(&mut g, n, &mut out);
        out
    }

    pub(crate) fn torus_from_grid_into(&self, g: &mut [C64], n: usize, out: &mut [C64]) {
        fft_nd(g, &vec![n; self.v], false);
        let scale = 1.0 / g.len() as f64;
        for (t, o) in out.iter_mut().enumerate() {
            *o = g[self.torus_pos(t, n)] * scale;
        }
    }

    /// Grid point angles of torus grid index `p` on `[n]^v`.
    pub fn torus_point(&self, p: usize, n: usize) -> Vec<f64> {
        let mut th = vec![0.0; self.v];
        let mut r = p;
        for j in (0..self.v).rev() {
            th[j] = 2.0 * std::f64::consts::PI * (r % n) as f64 / n as f64;
            r /= n;
        }
        th
    }

    /// Truncated convolution of two torus series.
    pub fn torus_convolve(&self, a: &[C64], b: &[C64]) -> Vec<C64> {
        let n = self.dealias_phi();
        let ga = self.torus_to_grid(a, n);
        let mut gb = self.torus_to_grid(b, n);
        gb.iter_mut().zip(&ga).for_each(|(y, x)| *y *= x);
        self.torus_from_grid(gb, n)
    }
}

/// Analyticity width and regularity weight of a norm.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormParams {
    pub s: f64,
    pub p: f64,
    pub s0: u32,
}

impl NormParams {
    pub fn new(s: f64, p: f64, s0: u32) -> Result<Self> {
        if !(s > 0.0) || !(p >= 0.0) {
            return Err(Error::Domain(format!("norm parameters need s > 0, p >= 0 (got s={s}, p={p})")));
        }
        Ok(NormParams { s, p, s0 })
    }

    /// Same width with a different regularity weight.
    pub fn with_p(self, p: f64) -> Self {
        NormParams { p, ..self }
    }

    pub fn with_s(self, s: f64) -> Self {
        NormParams { s, ..self }
    }
}

/// Lower bound `alpha0 / [l]^tau0` for `|omega . l|`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DivisorFloor {
    pub alpha0: f64,
    pub tau0: f64,
}

impl DivisorFloor {
    pub fn at(&self, bracket: f64) -> f64 {
        self.alpha0 / bracket.powf(self.tau0)
    }
}

/// Truncated double Fourier series.
#[derive(Clone, Debug)]
pub struct FourierField {
    trunc: Arc<Truncation>,
    coeffs: Vec<C64>,
    real: bool,
}

impl PartialEq for FourierField {
    fn eq(&self, o: &Self) -> bool {
        *self.trunc == *o.trunc && self.real == o.real && self.coeffs == o.coeffs
    }
}

impl FourierField {
    pub fn zeros(trunc: &Arc<Truncation>, real: bool) -> Self {
        FourierField { trunc: trunc.clone(), coeffs: vec![ZERO; trunc.len()], real }
    }

    pub fn from_coeffs(trunc: &Arc<Truncation>, coeffs: Vec<C64>, real: bool) -> Self {
        assert_eq!(coeffs.len(), trunc.len(), "coefficient count mismatch");
        FourierField { trunc: trunc.clone(), coeffs, real }
    }

    pub fn constant(trunc: &Arc<Truncation>, c: f64) -> Self {
        let mut f = Self::zeros(trunc, true);
        let i = trunc.idx(trunc.zero_index(), 0);
        f.coeffs[i] = C64::new(c, 0.0);
        f
    }

    /// Single mode `c e^{i(l.phi + kx)}` (complex, no reality flag).
    pub fn mode(trunc: &Arc<Truncation>, ell: &[i32], k: i32, c: C64) -> Self {
        let mut f = Self::zeros(trunc, false);
        f.set(ell, k, c);
        f
    }

    /// Real field `c e^{i(l.phi+kx)} + conj`.
    pub fn real_mode(trunc: &Arc<Truncation>, ell: &[i32], k: i32, c: C64) -> Self {
        let mut f = Self::zeros(trunc, true);
        let m: Vec<i32> = ell.iter().map(|x| -x).collect();
        if ell.iter().all(|&x| x == 0) && k == 0 {
            f.set(ell, k, C64::new(2.0 * c.re, 0.0));
        } else {
            f.set(ell, k, c);
            f.set(&m, -k, c.conj());
        }
        f
    }

    /// Builds a field from its values on the grid `[nphi]^v x [nx]`.
    pub fn from_grid(trunc: &Arc<Truncation>, g: Vec<C64>, nphi: usize, nx: usize, real: bool) -> Self {
        let mut f = FourierField { trunc: trunc.clone(), coeffs: trunc.from_grid(g, nphi, nx), real };
        if real {
            f.symmetrize();
        }
        f
    }

    pub fn trunc(&self) -> &Arc<Truncation> {
        &self.trunc
    }

    pub fn coeffs(&self) -> &[C64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [C64] {
        &mut self.coeffs
    }

    pub fn is_real(&self) -> bool {
        self.real
    }

    pub fn with_real_flag(mut self, real: bool) -> Self {
        self.real = real;
        self
    }

    pub fn at(&self, t: usize, k: i32) -> C64 {
        self.coeffs[self.trunc.idx(t, k)]
    }

    pub fn set_at(&mut self, t: usize, k: i32, c: C64) {
        let i = self.trunc.idx(t, k);
        self.coeffs[i] = c;
    }

    /// Coefficient at `(l, k)`, zero outside the truncation.
    pub fn get(&self, ell: &[i32], k: i32) -> C64 {
        match self.trunc.torus_index(ell) {
            Some(t) if k.unsigned_abs() as usize <= self.trunc.kx => self.at(t, k),
            _ => ZERO,
        }
    }

    /// Sets `(l, k)`; returns false when the mode is not retained.
    pub fn set(&mut self, ell: &[i32], k: i32, c: C64) -> bool {
        match self.trunc.torus_index(ell) {
            Some(t) if k.unsigned_abs() as usize <= self.trunc.kx => {
                self.set_at(t, k, c);
                true
            }
            _ => false,
        }
    }

    fn check(&self, o: &Self) {
        assert!(*self.trunc == *o.trunc, "incompatible truncations {:?} vs {:?}", self.trunc, o.trunc);
    }

    fn map_coeffs(&self, real: bool, f: impl Fn(usize, i32, C64) -> C64) -> Self {
        let tr = &self.trunc;
        let mut out = Vec::with_capacity(tr.len());
        for t in 0..tr.nt() {
            for k in -(tr.kx as i32)..=tr.kx as i32 {
                out.push(f(t, k, self.at(t, k)));
            }
        }
        FourierField { trunc: tr.clone(), coeffs: out, real }
    }

    pub fn scale(&self, c: f64) -> Self {
        self.map_coeffs(self.real, |_, _, z| z * c)
    }

    pub fn scale_c(&self, c: C64) -> Self {
        self.map_coeffs(self.real && c.im == 0.0, |_, _, z| z * c)
    }

    pub fn axpy(&mut self, a: f64, x: &Self) {
        self.check(x);
        self.real &= x.real;
        for (y, xi) in self.coeffs.iter_mut().zip(&x.coeffs) {
            *y += xi * a;
        }
    }

    /// Largest coefficient modulus.
    pub fn max_coeff(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm()).fold(0.0, f64::max)
    }

    /// Copies into another truncation (dropping or zero-padding modes).
    pub fn embed(&self, trunc: &Arc<Truncation>) -> Self {
        assert_eq!(trunc.v, self.trunc.v);
        let mut f = Self::zeros(trunc, self.real);
        for t in 0..self.trunc.nt() {
            for k in -(self.trunc.kx as i32)..=self.trunc.kx as i32 {
                f.set(self.trunc.ell(t), k, self.at(t, k));
            }
        }
        f
    }

    /// Forces `c(-l,-k) = conj c(l,k)` by averaging.
    pub fn symmetrize(&mut self) {
        let tr = self.trunc.clone();
        let old = self.coeffs.clone();
        for t in 0..tr.nt() {
            let nt = tr.neg(t);
            for k in -(tr.kx as i32)..=tr.kx as i32 {
                let a = old[tr.idx(t, k)];
                let b = old[tr.idx(nt, -k)].conj();
                self.coeffs[tr.idx(t, k)] = (a + b) * 0.5;
            }
        }
        self.real = true;
    }

    /// Largest violation of the reality relation.
    pub fn reality_defect(&self) -> f64 {
        let tr = &self.trunc;
        let mut m = 0.0f64;
        for t in 0..tr.nt() {
            for k in -(tr.kx as i32)..=tr.kx as i32 {
                m = m.max((self.at(t, k) - self.at(tr.neg(t), -k).conj()).norm());
            }
        }
        m
    }

    /// Part with `k = 0` (the space average, a function of phi).
    pub fn x_average(&self) -> Self {
        self.map_coeffs(self.real, |_, k, z| if k == 0 { z } else { ZERO })
    }

    /// Removes the space average.
    pub fn without_x_average(&self) -> Self {
        self.map_coeffs(self.real, |_, k, z| if k == 0 { ZERO } else { z })
    }

    /// Part with `l = 0` (the torus average, a function of x).
    pub fn torus_average(&self) -> Self {
        let z0 = self.trunc.zero_index();
        self.map_coeffs(self.real, |t, _, z| if t == z0 { z } else { ZERO })
    }

    /// The `(0,0)` coefficient.
    pub fn mean(&self) -> C64 {
        self.at(self.trunc.zero_index(), 0)
    }

    /// True if every `k != 0` coefficient vanishes.
    pub fn is_x_independent(&self, tol: f64) -> bool {
        let tr = &self.trunc;
        (0..tr.nt()).all(|t| (-(tr.kx as i32)..=tr.kx as i32).all(|k| k == 0 || self.at(t, k).norm() <= tol))
    }

    /// Torus series of space mode `k`.
    pub fn x_mode(&self, k: i32) -> Vec<C64> {
        (0..self.trunc.nt()).map(|t| self.at(t, k)).collect()
    }

    pub fn set_x_mode(&mut self, k: i32, series: &[C64]) {
        for (t, c) in series.iter().enumerate() {
            self.set_at(t, k, *c);
        }
    }

    /// Field depending only on phi built from a torus series.
    pub fn from_torus(trunc: &Arc<Truncation>, series: &[C64], real: bool) -> Self {
        let mut f = Self::zeros(trunc, real);
        f.set_x_mode(0, series);
        f
    }

    /// Values on the grid `[nphi]^v x [nx]`.
    pub fn grid_values(&self, nphi: usize, nx: usize) -> Vec<C64> {
        self.trunc.to_grid(&self.coeffs, nphi, nx)
    }

    /// Values on the default dealiasing grid.
    pub fn dealias_values(&self) -> Vec<C64> {
        self.grid_values(self.trunc.dealias_phi(), self.trunc.dealias_x())
    }

    /// Pointwise map on the dealiasing grid, re-truncated.
    pub fn map_pointwise(&self, real: bool, f: impl Fn(C64) -> C64) -> Self {
        let (np, nx) = (self.trunc.dealias_phi(), self.trunc.dealias_x());
        let g: Vec<C64> = self.grid_values(np, nx).into_iter().map(f).collect();
        FourierField::from_grid(&self.trunc, g, np, nx, real)
    }

    /// Value at an arbitrary point by direct summation.
    pub fn eval(&self, phi: &[f64], x: f64) -> C64 {
        let tr = &self.trunc;
        let mut acc = ZERO;
        for t in 0..tr.nt() {
            let a: f64 = tr.ell(t).iter().zip(phi).map(|(&l, &p)| l as f64 * p).sum();
            for k in -(tr.kx as i32)..=tr.kx as i32 {
                let c = self.at(t, k);
                if c != ZERO {
                    acc += c * C64::from_polar(1.0, a + k as f64 * x);
                }
            }
        }
        acc
    }

    /// Truncated product via the padded collocation grid.
    pub fn mul(&self, o: &Self) -> Self {
        self.check(o);
        let real = self.real && o.real;
        if let Some(c) = self.as_constant() {
            return o.scale_c(c).with_real_flag(real);
        }
        if let Some(c) = o.as_constant() {
            return self.scale_c(c).with_real_flag(real);
        }
        let (np, nx) = (self.trunc.dealias_phi(), self.trunc.dealias_x());
        let a = self.grid_values(np, nx);
        let mut b = o.grid_values(np, nx);
        b.iter_mut().zip(&a).for_each(|(y, x)| *y *= x);
        FourierField::from_grid(&self.trunc, b, np, nx, real)
    }

    /// The value of a field supported on the zero mode only.
    fn as_constant(&self) -> Option<C64> {
        let z = self.trunc.idx(self.trunc.zero_index(), 0);
        self.coeffs.iter().enumerate().all(|(i, c)| i == z || *c == ZERO).then(|| self.coeffs[z])
    }

    /// Left-to-right truncated product of several fields.
    pub fn product(fields: &[&FourierField]) -> Self {
        let mut acc = fields[0].clone();
        for f in &fields[1..] {
            acc = acc.mul(f);
        }
        acc
    }

    /// `d^n/dx^n`.
    pub fn dx(&self, order: u32) -> Self {
        self.map_coeffs(self.real, |_, k, z| z * (I * k as f64).powu(order))
    }

    /// `omega . d_phi`.
    pub fn dphi_omega(&self, omega: &[f64]) -> Self {
        let tr = self.trunc.clone();
        self.map_coeffs(self.real, |t, _, z| z * I * tr.omega_dot(t, omega))
    }

    /// Zero-average primitive in x; errors on a nonzero space average.
    pub fn dx_inv(&self) -> Result<Self> {
        let tol = 1e-14 * (1.0 + self.max_coeff());
        for t in 0..self.trunc.nt() {
            let c = self.at(t, 0);
            if c.norm() > tol {
                return Err(Error::Domain(format!(
                    "dx_inv needs zero space average; mode l={:?} has {:.3e}",
                    self.trunc.ell(t),
                    c.norm()
                )));
            }
        }
        Ok(self.map_coeffs(self.real, |_, k, z| if k == 0 { ZERO } else { z / (I * k as f64) }))
    }

    /// Inverse of `omega . d_phi` on zero torus average; checks every retained `l`.
    pub fn omega_dphi_inv(&self, omega: &[f64], floor: &DivisorFloor) -> Result<Self> {
        let tr = self.trunc.clone();
        let z0 = tr.zero_index();
        for t in 0..tr.nt() {
            if t == z0 {
                continue;
            }
            let d = tr.omega_dot(t, omega);
            let f = floor.at(tr.bracket(t));
            if d.abs() < f {
                return Err(Error::SmallDivisor { ell: tr.ell(t).to_vec(), divisor: d.abs(), floor: f });
            }
        }
        Ok(self.map_coeffs(self.real, |t, _, z| if t == z0 { ZERO } else { z / (I * tr.omega_dot(t, omega)) }))
    }

    /// `(sum |u|^2 e^{2(|l|+|k|)s} ([l]+[k])^{2p})^{1/2}`.
    pub fn norm_sp(&self, np: &NormParams) -> f64 {
        self.weighted_norm(|lb, l1, kb, ka| {
            (2.0 * (l1 + ka) * np.s).exp() * (lb + kb).powf(2.0 * np.p)
        })
    }

    /// `(sum |u|^2 e^{2(|l|+|k|)s} [k]^{2p} [l]^{2p})^{1/2}`.
    pub fn norm_frak(&self, np: &NormParams) -> f64 {
        self.weighted_norm(|lb, l1, kb, ka| {
            (2.0 * (l1 + ka) * np.s).exp() * kb.powf(2.0 * np.p) * lb.powf(2.0 * np.p)
        })
    }

    fn weighted_norm(&self, w: impl Fn(f64, f64, f64, f64) -> f64) -> f64 {
        let tr = &self.trunc;
        let terms = (0..tr.nt()).flat_map(|t| {
            let lb = tr.bracket(t);
            let l1 = tr.l1(t) as f64;
            let w = &w;
            (-(tr.kx as i32)..=tr.kx as i32).map(move |k| {
                let ka = k.unsigned_abs() as f64;
                self.at(t, k).norm_sqr() * w(lb, l1, ka.max(1.0), ka)
            })
        });
        compensated_sum(terms).sqrt()
    }

    /// `sum_{|a| <= p} sup |D^a u|` over the boundary of the complex strip
    /// of width `s`, sampled on the dealiasing grid.
    pub fn norm_max(&self, s: f64, p: u32) -> f64 {
        let tr = &self.trunc;
        let nvar = tr.v + 1;
        let (np, nx) = (tr.dealias_phi(), tr.dealias_x());
        let mut total = 0.0;
        for alpha in multi_indices(nvar, p) {
            let mut best = 0.0f64;
            for corner in 0..(1usize << nvar) {
                let sign: Vec<f64> = (0..nvar).map(|j| if corner >> j & 1 == 1 { 1.0 } else { -1.0 }).collect();
                let f = self.map_coeffs(false, |t, k, z| {
                    let ell = tr.ell(t);
                    let mut factor = C64::new(1.0, 0.0);
                    let mut expo = 0.0;
                    for j in 0..tr.v {
                        factor *= (I * ell[j] as f64).powu(alpha[j]);
                        expo += -sign[j] * ell[j] as f64 * s;
                    }
                    factor *= (I * k as f64).powu(alpha[tr.v]);
                    expo += -sign[tr.v] * k as f64 * s;
                    z * factor * expo.exp()
                });
                let m = f.grid_values(np, nx).iter().map(|z| z.norm()).fold(0.0, f64::max);
                best = best.max(m);
            }
            total += best;
        }
        total
    }

    /// JSON form `{v, Kphi, Kx, real_flag, coeffs: [[l..., k, re, im], ...]}`.
    pub fn to_json_value(&self) -> FieldJson {
        let tr = &self.trunc;
        let mut coeffs = Vec::new();
        for t in 0..tr.nt() {
            for k in -(tr.kx as i32)..=tr.kx as i32 {
                let c = self.at(t, k);
                if c != ZERO {
                    let mut row: Vec<f64> = tr.ell(t).iter().map(|&l| l as f64).collect();
                    row.push(k as f64);
                    row.push(c.re);
                    row.push(c.im);
                    coeffs.push(row);
                }
            }
        }
        FieldJson { v: tr.v, kphi: tr.kphi, kx: tr.kx, real_flag: self.real, coeffs }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_json_value()).expect("field serializes")
    }

    pub fn from_json_value(j: &FieldJson, trunc: Option<&Arc<Truncation>>) -> Result<Self> {
        let tr = match trunc {
            Some(t) if t.v == j.v && t.kphi == j.kphi && t.kx == j.kx => t.clone(),
            Some(t) => {
                return Err(Error::Serde(format!(
                    "field truncation ({}, {}, {}) does not match {:?}",
                    j.v, j.kphi, j.kx, t
                )))
            }
            None => Truncation::new(j.v, j.kphi, j.kx),
        };
        let mut f = FourierField::zeros(&tr, j.real_flag);
        for row in &j.coeffs {
            if row.len() != j.v + 3 {
                return Err(Error::Serde(format!("coefficient row of length {} (want {})", row.len(), j.v + 3)));
            }
            let ell: Vec<i32> = row[..j.v].iter().map(|&x| x as i32).collect();
            let k = row[j.v] as i32;
            if !f.set(&ell, k, C64::new(row[j.v + 1], row[j.v + 2])) {
                return Err(Error::Serde(format!("mode l={ell:?}, k={k} outside the truncation")));
            }
        }
        Ok(f)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let j: FieldJson = serde_json::from_str(s)?;
        Self::from_json_value(&j, None)
    }

    /// Random field with coefficients of modulus up to `amp e^{-(|l|+|k|) decay}`.
    pub fn random<R: Rng>(trunc: &Arc<Truncation>, rng: &mut R, amp: f64, decay: f64, real: bool, zero_avg: bool) -> Self {
        let mut f = FourierField::zeros(trunc, false);
        for t in 0..trunc.nt() {
            for k in -(trunc.kx as i32)..=trunc.kx as i32 {
                if zero_avg && k == 0 {
                    continue;
                }
                let w = amp * (-((trunc.l1(t) as f64) + k.abs() as f64) * decay).exp();
                let c = C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)) * w;
                f.set_at(t, k, c);
            }
        }
        if real {
            f.symmetrize();
        }
        f
    }
}

/// All multi-indices in `nvar` variables of total order at most `p`.
fn multi_indices(nvar: usize, p: u32) -> Vec<Vec<u32>> {
    let mut out = vec![vec![]];
    for _ in 0..nvar {
        let mut next = Vec::new();
        for a in &out {
            let used: u32 = a.iter().sum();
            for j in 0..=(p - used) {
                let mut b = a.clone();
                b.push(j);
                next.push(b);
            }
        }
        out = next;
    }
    out
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FieldJson {
    pub v: usize,
    #[serde(rename = "Kphi")]
    pub kphi: usize,
    #[serde(rename = "Kx")]
    pub kx: usize,
    pub real_flag: bool,
    pub coeffs: Vec<Vec<f64>>,
}

impl Add for &FourierField {
    type Output = FourierField;
    fn add(self, o: &FourierField) -> FourierField {
        self.check(o);
        let c = self.coeffs.iter().zip(&o.coeffs).map(|(a, b)| a + b).collect();
        FourierField { trunc: self.trunc.clone(), coeffs: c, real: self.real && o.real }
    }
}

impl Sub for &FourierField {
    type Output = FourierField;
    fn sub(self, o: &FourierField) -> FourierField {
        self.check(o);
        let c = self.coeffs.iter().zip(&o.coeffs).map(|(a, b)| a - b).collect();
        FourierField { trunc: self.trunc.clone(), coeffs: c, real: self.real && o.real }
    }
}

impl Neg for &FourierField {
    type Output = FourierField;
    fn neg(self) -> FourierField {
        self.scale(-1.0)
    }
}

impl Mul for &FourierField {
    type Output = FourierField;
    fn mul(self, o: &FourierField) -> FourierField {
        FourierField::mul(self, o)
    }
}

/// Finite sample of the parameter interval `[1/2, 3/2]` with payloads.
#[derive(Clone, Debug)]
pub struct LambdaFamily<T> {
    pub samples: Vec<(f64, T)>,
    pub omega_bar: Vec<f64>,
    pub alpha0: f64,
    pub tau0: f64,
}

pub const LAMBDA_MIN: f64 = 0.5;
pub const LAMBDA_MAX: f64 = 1.5;

impl<T> LambdaFamily<T> {
    pub fn new(samples: Vec<(f64, T)>, omega_bar: Vec<f64>, alpha0: f64, tau0: f64) -> Result<Self> {
        if let Some((l, _)) = samples.iter().find(|(l, _)| !(LAMBDA_MIN..=LAMBDA_MAX).contains(l)) {
            return Err(Error::Config(format!("lambda {l} outside [1/2, 3/2]")));
        }
        Ok(LambdaFamily { samples, omega_bar, alpha0, tau0 })
    }

    /// `n` equispaced parameters in `[1/2, 3/2]` with payloads from `f`.
    pub fn equispaced(n: usize, omega_bar: Vec<f64>, alpha0: f64, tau0: f64, f: impl Fn(f64) -> T) -> Result<Self> {
        let samples = (0..n)
            .map(|j| {
                let l = if n == 1 { 1.0 } else { LAMBDA_MIN + (LAMBDA_MAX - LAMBDA_MIN) * j as f64 / (n - 1) as f64 };
                (l, f(l))
            })
            .collect();
        Self::new(samples, omega_bar, alpha0, tau0)
    }

    pub fn omega(&self, lambda: f64) -> Vec<f64> {
        self.omega_bar.iter().map(|w| w * lambda).collect()
    }

    /// `sup_l ||f(l)|| + max_{l1 != l2} ||f(l1) - f(l2)|| / |l1 - l2|`.
    pub fn lip_norm(&self, norm: impl Fn(&T) -> f64, dist: impl Fn(&T, &T) -> f64) -> Result<LipNorm> {
        if self.samples.len() < 2 {
            return Err(Error::Config("Lipschitz norm needs at least two lambda samples".into()));
        }
        let sup = self.samples.iter().map(|(_, x)| norm(x)).fold(0.0, f64::max);
        let mut lip = 0.0f64;
        for (a, (la, xa)) in self.samples.iter().enumerate() {
            for (lb, xb) in &self.samples[a + 1..] {
                if la != lb {
                    lip = lip.max(dist(xa, xb) / (la - lb).abs());
                }
            }
        }
        Ok(LipNorm { sup, lip })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LipNorm {
    pub sup: f64,
    pub lip: f64,
}

impl LipNorm {
    pub fn total(&self) -> f64 {
        self.sup + self.lip
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tr() -> Arc<Truncation> {
        Truncation::new(2, 4, 6)
    }

    fn np(s: f64, p: f64) -> NormParams {
        NormParams { s, p, s0: 3 }
    }

    #[test]
    fn ball_counts() {
        let t = Truncation::new(2, 8, 16);
        assert_eq!(t.nt(), 2 * 64 + 2 * 8 + 1);
        assert_eq!(t.len(), 145 * 33);
        for i in 0..t.nt() {
            assert_eq!(t.ell(t.neg(i)), t.ell(i).iter().map(|x| -x).collect::<Vec<_>>().as_slice());
        }
    }

    #[test]
    fn constant_norms() {
        let one = FourierField::constant(&tr(), 1.0);
        assert!((one.norm_sp(&np(0.7, 2.0)) - 4.0).abs() < 1e-14);
        assert!((one.norm_frak(&np(0.3, 5.0)) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn single_mode_norms() {
        let t = tr();
        let e = FourierField::mode(&t, &[0, 0], 1, C64::new(1.0, 0.0));
        assert!((e.norm_sp(&np(1e-300, 0.0)) - 1.0).abs() < 1e-14);
        let m = FourierField::mode(&t, &[2, -1], 0, C64::new(1.0, 0.0));
        assert!((m.norm_frak(&np(0.1, 1.0)) - 0.3f64.exp() * 3.0).abs() < 1e-13);
    }

    #[test]
    fn norm_matches_direct_summation() {
        let t = tr();
        let mut f = FourierField::zeros(&t, false);
        let modes = [([1, 0], 2, 0.3), ([0, -2], -1, -1.2), ([1, 1], 0, 0.5), ([0, 0], 3, 2.0), ([-2, 1], -6, 0.01)];
        let (s, p) = (0.2, 1.5);
        let mut direct = 0.0;
        for (l, k, a) in modes {
            f.set(&l, k, C64::new(a, 0.5 * a));
            let l1 = l[0].abs() + l[1].abs();
            let w = (2.0 * (l1 + k.abs()) as f64 * s).exp() * ((l1.max(1) + k.abs().max(1)) as f64).powf(2.0 * p);
            direct += 1.25 * a * a * w;
        }
        let got = f.norm_sp(&np(s, p));
        assert!((got - direct.sqrt()).abs() <= 1e-12 * got);
    }

    #[test]
    fn product_of_conjugate_modes() {
        let t = tr();
        let a = FourierField::mode(&t, &[0, 0], 1, C64::new(1.0, 0.0));
        let b = FourierField::mode(&t, &[0, 0], -1, C64::new(1.0, 0.0));
        let c = a.mul(&b);
        assert!((&c - &FourierField::constant(&t, 1.0)).max_coeff() < 1e-14);
        assert_eq!(a.mul(&FourierField::zeros(&t, true)).max_coeff(), 0.0);
    }

    #[test]
    fn product_matches_convolution() {
        let t = tr();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = FourierField::random(&t, &mut rng, 1.0, 0.2, true, false);
        let b = FourierField::random(&t, &mut rng, 1.0, 0.2, false, false);
        let c = a.mul(&b);
        let mut oracle = FourierField::zeros(&t, false);
        for ta in 0..t.nt() {
            for tb in 0..t.nt() {
                let l: Vec<i32> = t.ell(ta).iter().zip(t.ell(tb)).map(|(x, y)| x + y).collect();
                for ka in -6..=6 {
                    for kb in -6..=6 {
                        let cur = oracle.get(&l, ka + kb);
                        oracle.set(&l, ka + kb, cur + a.at(ta, ka) * b.at(tb, kb));
                    }
                }
            }
        }
        assert!((&c - &oracle).max_coeff() < 1e-13);
    }

    #[test]
    fn derivative_and_primitive() {
        let t = tr();
        let e = FourierField::mode(&t, &[1, 0], 3, C64::new(1.0, 0.0));
        assert_eq!(e.dx(1).get(&[1, 0], 3), C64::new(0.0, 3.0));
        assert_eq!(e.dx_inv().unwrap().get(&[1, 0], 3), C64::new(1.0, 0.0) / C64::new(0.0, 3.0));
        let one = FourierField::constant(&t, 1.0);
        assert!(matches!(one.dx_inv(), Err(Error::Domain(_))));
        assert_eq!(one.dphi_omega(&[1.0, 1.6]).max_coeff(), 0.0);
        // sin x -> -cos x
        let sin = FourierField::real_mode(&t, &[0, 0], 1, C64::new(0.0, -0.5));
        let cos = FourierField::real_mode(&t, &[0, 0], 1, C64::new(0.5, 0.0));
        assert!((&sin.dx_inv().unwrap() + &cos).max_coeff() < 1e-15);
    }

    #[test]
    fn omega_inverse_and_floor() {
        let t = tr();
        let omega = [1.0, 0.5 * (1.0 + 5f64.sqrt())];
        let floor = DivisorFloor { alpha0: 0.01, tau0: 1.2 };
        let e = FourierField::mode(&t, &[1, -1], 2, C64::new(1.0, 0.0));
        let w = e.omega_dphi_inv(&omega, &floor).unwrap();
        let d = omega[0] - omega[1];
        assert!((w.get(&[1, -1], 2) - C64::new(1.0, 0.0) / (I * d)).norm() < 1e-15);
        let c = FourierField::constant(&t, 2.0).omega_dphi_inv(&omega, &floor).unwrap();
        assert_eq!(c.max_coeff(), 0.0);
        let bad = [1.0, 0.5];
        match e.omega_dphi_inv(&bad, &floor) {
            Err(Error::SmallDivisor { ell, .. }) => {
                assert_eq!(ell[0] as f64 + ell[1] as f64 * 0.5, 0.0);
            }
            other => panic!("expected small divisor, got {other:?}"),
        }
    }

    #[test]
    fn lip_norm_linear_family() {
        let t = tr();
        let u0 = FourierField::mode(&t, &[0, 0], 1, C64::new(1.0, 0.0));
        let fam = LambdaFamily::new(vec![(0.5, u0.scale(0.5)), (1.5, u0.scale(1.5))], vec![1.0, 1.6], 0.01, 1.2).unwrap();
        let n = np(1e-300, 0.0);
        let l = fam.lip_norm(|f| f.norm_sp(&n), |a, b| (a - b).norm_sp(&n)).unwrap();
        assert!((l.sup - 1.5).abs() < 1e-14 && (l.lip - 1.0).abs() < 1e-14);
        assert!((l.total() - 2.5).abs() < 1e-14);
        let one = LambdaFamily::new(vec![(1.0, u0.clone())], vec![1.0, 1.6], 0.01, 1.2).unwrap();
        assert!(one.lip_norm(|f| f.norm_sp(&n), |a, b| (a - b).norm_sp(&n)).is_err());
        assert!(LambdaFamily::new(vec![(2.0, u0)], vec![1.0], 0.01, 1.2).is_err());
    }

    #[test]
    fn max_norm_simple() {
        let t = tr();
        assert_eq!(FourierField::zeros(&t, true).norm_max(0.1, 2), 0.0);
        let e = FourierField::mode(&t, &[0, 0], 1, C64::new(1.0, 0.0));
        assert!((e.norm_max(0.0, 0) - 1.0).abs() < 1e-14);
        // e^{ix} on the strip |Im x| <= s peaks at e^{s}; first derivatives add e^{s} once more.
        assert!((e.norm_max(0.1, 1) - 2.0 * 0.1f64.exp()).abs() < 1e-13);
    }

    #[test]
    fn json_roundtrip_bit_exact() {
        let t = tr();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let f = FourierField::random(&t, &mut rng, 1.0, 0.1, true, true);
        let g = FourierField::from_json(&f.to_json()).unwrap();
        assert_eq!(f, g);
        assert!(FourierField::from_json(r#"{"v":1,"Kphi":1,"Kx":1,"real_flag":true,"coeffs":[[3,0,1.0,0.0]]}"#).is_err());
    }

    #[test]
    fn grid_roundtrip_and_eval() {
        let t = tr();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = FourierField::random(&t, &mut rng, 1.0, 0.3, true, false);
        let (np_, nx) = (t.dealias_phi(), t.dealias_x());
        let g = f.grid_values(np_, nx);
        let p = 5 * nx + 7;
        let th = t.torus_point(p / nx, np_);
        let x = 2.0 * std::f64::consts::PI * 7.0 / nx as f64;
        assert!((g[p] - f.eval(&th, x)).norm() < 1e-12);
        let back = FourierField::from_grid(&t, g, np_, nx, true);
        assert!((&back - &f).max_coeff() < 1e-14);
    }
}
