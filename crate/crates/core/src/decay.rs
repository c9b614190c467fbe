//! Operators on zero-average fields represented as matrices indexed by
//! space modes `i1, i2 in Z \ {0}`, each entry a phi-dependent torus series.
//!
//! `(A h)_{i1}(phi) = sum_{i2} A^{i2}_{i1}(phi) h_{i2}(phi)`. Products act
//! pointwise in phi on the dealiasing grid and re-truncate the torus series.

use std::sync::Arc;

use num_complex::Complex64 as C64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::compensated_sum;
use crate::spectral::{FourierField, NormParams, Truncation, ZERO};

/// Default tolerance on exponential series terms.
pub const EXP_TOL: f64 = 1e-14;
pub const EXP_MAX_TERMS: usize = 60;

/// The block weightings of the decay norms.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DecayKind {
    Plain,
    /// Entries divided by `|i1|^2 |i2|`.
    Varsigma,
    /// Entries weighted by `i2^2 / i1^2`.
    Tilde,
    /// Entries weighted by `|i1| / |i2|`.
    Hat,
    /// Max of plain, tilde and hat.
    Rho,
}

impl DecayKind {
    fn weight(self, i1: i32, i2: i32) -> f64 {
        let (a, b) = (i1.unsigned_abs() as f64, i2.unsigned_abs() as f64);
        match self {
            DecayKind::Plain => 1.0,
            DecayKind::Varsigma => 1.0 / (a * a * b),
            DecayKind::Tilde => b * b / (a * a),
            DecayKind::Hat => a / b,
            DecayKind::Rho => unreachable!("rho is a max of other kinds"),
        }
    }
}

/// Position of a nonzero space mode in `[-Kx..-1, 1..Kx]`.
#[inline]
pub fn space_pos(kx: usize, i: i32) -> usize {
    debug_assert!(i != 0 && i.unsigned_abs() as usize <= kx);
    if i < 0 {
        (i + kx as i32) as usize
    } else {
        (i + kx as i32 - 1) as usize
    }
}

#[inline]
pub fn space_mode(kx: usize, pos: usize) -> i32 {
    let p = pos as i32 - kx as i32;
    if p < 0 {
        p
    } else {
        p + 1
    }
}

/// Matrix of phi-dependent blocks acting on zero-average fields.
#[derive(Clone, Debug, PartialEq)]
pub struct VarCoeffOperator {
    trunc: Arc<Truncation>,
    n: usize,
    blocks: Vec<C64>,
    hamiltonian: bool,
}

impl VarCoeffOperator {
    pub fn zeros(trunc: &Arc<Truncation>) -> Self {
        let n = 2 * trunc.kx;
        VarCoeffOperator { trunc: trunc.clone(), n, blocks: vec![ZERO; n * n * trunc.nt()], hamiltonian: false }
    }

    pub fn identity(trunc: &Arc<Truncation>) -> Self {
        Self::diagonal(trunc, |_| 1.0)
    }

    /// Constant diagonal operator `h_i -> f(i) h_i`.
    pub fn diagonal(trunc: &Arc<Truncation>, f: impl Fn(i32) -> f64) -> Self {
        Self::diagonal_c(trunc, |i| C64::new(f(i), 0.0))
    }

    pub fn diagonal_c(trunc: &Arc<Truncation>, f: impl Fn(i32) -> C64) -> Self {
        let mut a = Self::zeros(trunc);
        let z0 = trunc.zero_index();
        for p in 0..a.n {
            let i = space_mode(trunc.kx, p);
            a.block_mut(i, i)[z0] = f(i);
        }
        a
    }

    /// Multiplication by `g`: `T^{i2}_{i1} = g_{i1 - i2}(phi)`.
    pub fn from_multiplier(g: &FourierField) -> Self {
        let tr = g.trunc().clone();
        let mut a = Self::zeros(&tr);
        let kx = tr.kx as i32;
        for r in 0..a.n {
            let i1 = space_mode(tr.kx, r);
            for c in 0..a.n {
                let i2 = space_mode(tr.kx, c);
                let d = i1 - i2;
                if d.abs() <= kx {
                    let s = g.x_mode(d);
                    a.block_mut(i1, i2).copy_from_slice(&s);
                }
            }
        }
        a
    }

    pub fn trunc(&self) -> &Arc<Truncation> {
        &self.trunc
    }

    /// Matrix size `2 Kx`.
    /// Random operator with block coefficients of modulus up to
    /// `amp e^{-(|l| + |i1 - i2|) decay}`.
    pub fn random<R: Rng>(t: &Arc<Truncation>, rng: &mut R, amp: f64, decay: f64) -> Self {
        let mut a = VarCoeffOperator::zeros(t);
        let n = a.size();
        for r in 0..n {
            for c in 0..n {
                let d = (space_mode(t.kx, r) - space_mode(t.kx, c)).abs() as f64;
                let b = a.block_at_mut(r, c);
                for (tt, z) in b.iter_mut().enumerate() {
                    let w = amp * (-(t.l1(tt) as f64 + d) * decay).exp();
                    *z = C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)) * w;
                }
            }
        }
        a
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn is_hamiltonian(&self) -> bool {
        self.hamiltonian
    }

    pub fn with_hamiltonian(mut self, flag: bool) -> Self {
        self.hamiltonian = flag;
        self
    }

    fn offset(&self, r: usize, c: usize) -> usize {
        (r * self.n + c) * self.trunc.nt()
    }

    pub fn block(&self, i1: i32, i2: i32) -> &[C64] {
        let o = self.offset(space_pos(self.trunc.kx, i1), space_pos(self.trunc.kx, i2));
        &self.blocks[o..o + self.trunc.nt()]
    }

    pub fn block_mut(&mut self, i1: i32, i2: i32) -> &mut [C64] {
        let o = self.offset(space_pos(self.trunc.kx, i1), space_pos(self.trunc.kx, i2));
        let nt = self.trunc.nt();
        &mut self.blocks[o..o + nt]
    }

    pub(crate) fn block_at(&self, r: usize, c: usize) -> &[C64] {
        let o = self.offset(r, c);
        &self.blocks[o..o + self.trunc.nt()]
    }

    pub(crate) fn block_at_mut(&mut self, r: usize, c: usize) -> &mut [C64] {
        let o = self.offset(r, c);
        let nt = self.trunc.nt();
        &mut self.blocks[o..o + nt]
    }

    #[cfg(test)]
    pub(crate) fn raw(&self) -> &[C64] {
        &self.blocks
    }

    fn check(&self, o: &Self) {
        assert!(*self.trunc == *o.trunc, "incompatible operator truncations");
    }

    pub fn add(&self, o: &Self) -> Self {
        self.check(o);
        let mut r = self.clone();
        r.axpy(C64::new(1.0, 0.0), o);
        r.hamiltonian = self.hamiltonian && o.hamiltonian;
        r
    }

    pub fn sub(&self, o: &Self) -> Self {
        self.check(o);
        let mut r = self.clone();
        r.axpy(C64::new(-1.0, 0.0), o);
        r.hamiltonian = self.hamiltonian && o.hamiltonian;
        r
    }

    pub fn axpy(&mut self, a: C64, x: &Self) {
        self.check(x);
        for (y, v) in self.blocks.iter_mut().zip(&x.blocks) {
            *y += a * v;
        }
    }

    pub fn scale(&self, a: C64) -> Self {
        let mut r = self.clone();
        r.blocks.iter_mut().for_each(|z| *z *= a);
        r
    }

    /// Largest coefficient modulus.
    pub fn max_coeff(&self) -> f64 {
        self.blocks.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// Operator with only the diagonal blocks kept.
    pub fn diagonal_part(&self) -> Self {
        let mut d = Self::zeros(&self.trunc);
        for r in 0..self.n {
            d.block_at_mut(r, r).copy_from_slice(self.block_at(r, r));
        }
        d
    }

    /// Operator with the diagonal blocks removed.
    pub fn off_diagonal(&self) -> Self {
        let mut d = self.clone();
        let nt = self.trunc.nt();
        for r in 0..self.n {
            d.block_at_mut(r, r).copy_from_slice(&vec![ZERO; nt]);
        }
        d
    }

    /// `omega . d_phi` applied to every block.
    pub fn dphi_omega(&self, omega: &[f64]) -> Self {
        let tr = &self.trunc;
        let nt = tr.nt();
        let w: Vec<C64> = (0..nt).map(|t| C64::new(0.0, tr.omega_dot(t, omega))).collect();
        let mut r = self.clone();
        for chunk in r.blocks.chunks_exact_mut(nt) {
            chunk.iter_mut().zip(&w).for_each(|(z, w)| *z *= w);
        }
        r
    }

    /// Decay norm of the requested kind.
    pub fn decay_norm(&self, kind: DecayKind, np: &NormParams) -> f64 {
        if kind == DecayKind::Rho {
            return [DecayKind::Plain, DecayKind::Tilde, DecayKind::Hat]
                .iter()
                .map(|k| self.decay_norm(*k, np))
                .fold(0.0, f64::max);
        }
        let tr = &self.trunc;
        let kx = tr.kx as i32;
        let tw: Vec<f64> = (0..tr.nt())
            .map(|t| (2.0 * tr.l1(t) as f64 * np.s).exp() * (tr.bracket(t) + 1.0).powf(2.0 * np.p))
            .collect();
        let mut sup = vec![0.0f64; (4 * kx + 1) as usize];
        for r in 0..self.n {
            let i1 = space_mode(tr.kx, r);
            for c in 0..self.n {
                let i2 = space_mode(tr.kx, c);
                let w = kind.weight(i1, i2);
                let b = self.block_at(r, c);
                let sq = compensated_sum(b.iter().zip(&tw).map(|(z, t)| z.norm_sqr() * t)) * w * w;
                let d = (i1 - i2 + 2 * kx) as usize;
                sup[d] = sup[d].max(sq);
            }
        }
        let terms = sup.iter().enumerate().map(|(d, s)| {
            let i = (d as i32 - 2 * kx).unsigned_abs() as f64;
            (2.0 * i * np.s).exp() * i.max(1.0).powf(2.0 * np.p) * s
        });
        compensated_sum(terms).sqrt()
    }

    /// Application to a field; the space average of `h` is ignored and the
    /// result has zero space average.
    pub fn apply(&self, h: &FourierField) -> FourierField {
        assert!(*self.trunc == **h.trunc(), "operator/field truncation mismatch");
        let tr = &self.trunc;
        let np = tr.dealias_phi();
        let g = OpGrid::from_op(self);
        let ntg = g.ntg;
        let n = self.n;
        let mut hg = vec![ZERO; ntg * n];
        for c in 0..n {
            let v = tr.torus_to_grid(&h.x_mode(space_mode(tr.kx, c)), np);
            for (p, z) in v.into_iter().enumerate() {
                hg[p * n + c] = z;
            }
        }
        let mut out = FourierField::zeros(tr, false);
        let mut col = vec![ZERO; ntg];
        for r in 0..n {
            for p in 0..ntg {
                let m = &g.data[p * n * n + r * n..p * n * n + (r + 1) * n];
                let x = &hg[p * n..(p + 1) * n];
                col[p] = m.iter().zip(x).map(|(a, b)| a * b).sum();
            }
            let s = tr.torus_from_grid(col.clone(), np);
            out.set_x_mode(space_mode(tr.kx, r), &s);
        }
        out
    }

    /// Truncated operator product `A B`.
    pub fn mul(&self, o: &Self) -> Self {
        self.check(o);
        let a = OpGrid::from_op(self);
        let b = OpGrid::from_op(o);
        a.mul(&b).to_op(&self.trunc).with_hamiltonian(false)
    }

    /// `e^A` by its truncated power series.
    pub fn exp(&self, tol: f64) -> Result<Self> {
        let mut e = self.exp_minus_identity(tol)?;
        let z0 = self.trunc.zero_index();
        for r in 0..self.n {
            e.block_at_mut(r, r)[z0] += C64::new(1.0, 0.0);
        }
        Ok(e)
    }

    /// `e^A - I`, summed without forming the identity.
    pub fn exp_minus_identity(&self, tol: f64) -> Result<Self> {
        let np = NormParams { s: 1e-300, p: 0.0, s0: 0 };
        let size = self.decay_norm(DecayKind::Plain, &np);
        if size > 0.5 * EXP_GUARD {
            return Err(Error::Domain(format!("exponential needs a small generator (|A| = {size:.3e})")));
        }
        let ag = OpGrid::from_op(self);
        let mut term = self.clone();
        let mut sum = self.clone();
        for k in 2..=EXP_MAX_TERMS {
            if term.decay_norm(DecayKind::Plain, &np) < tol {
                return Ok(sum);
            }
            term = ag.mul(&OpGrid::from_op(&term)).to_op(&self.trunc).scale(C64::new(1.0 / k as f64, 0.0));
            sum.axpy(C64::new(1.0, 0.0), &term);
        }
        if term.decay_norm(DecayKind::Plain, &np) < tol {
            return Ok(sum);
        }
        Err(Error::Numerical(format!("exponential series did not converge in {EXP_MAX_TERMS} terms")))
    }

    /// Galerkin matrix on the basis `(torus mode, nonzero space mode)`,
    /// row-major, size `(nt * 2Kx)^2`.
    pub fn to_dense(&self) -> Vec<C64> {
        let tr = &self.trunc;
        let nt = tr.nt();
        let dim = nt * self.n;
        let mut m = vec![ZERO; dim * dim];
        let mut diff = vec![0i32; tr.v];
        for r in 0..self.n {
            for c in 0..self.n {
                let b = self.block_at(r, c);
                for t1 in 0..nt {
                    for t2 in 0..nt {
                        for j in 0..tr.v {
                            diff[j] = tr.ell(t1)[j] - tr.ell(t2)[j];
                        }
                        if let Some(t) = tr.torus_index(&diff) {
                            m[(r * nt + t1) * dim + c * nt + t2] = b[t];
                        }
                    }
                }
            }
        }
        m
    }

    pub fn to_json_value(&self) -> OperatorJson {
        let tr = &self.trunc;
        let mut blocks = Vec::new();
        for r in 0..self.n {
            for c in 0..self.n {
                let b = self.block_at(r, c);
                let rows: Vec<Vec<f64>> = (0..tr.nt())
                    .filter(|&t| b[t] != ZERO)
                    .map(|t| {
                        let mut row: Vec<f64> = tr.ell(t).iter().map(|&l| l as f64).collect();
                        row.push(b[t].re);
                        row.push(b[t].im);
                        row
                    })
                    .collect();
                if !rows.is_empty() {
                    blocks.push(BlockJson { i1: space_mode(tr.kx, r), i2: space_mode(tr.kx, c), coeffs: rows });
                }
            }
        }
        OperatorJson { v: tr.v, kphi: tr.kphi, kx: tr.kx, hamiltonian: self.hamiltonian, blocks }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_json_value()).expect("operator serializes")
    }

    pub fn from_json_value(j: &OperatorJson, trunc: Option<&Arc<Truncation>>) -> Result<Self> {
        let tr = match trunc {
            Some(t) if t.v == j.v && t.kphi == j.kphi && t.kx == j.kx => t.clone(),
            Some(t) => return Err(Error::Serde(format!("operator truncation does not match {t:?}"))),
            None => Truncation::new(j.v, j.kphi, j.kx),
        };
        let mut a = Self::zeros(&tr).with_hamiltonian(j.hamiltonian);
        let kx = tr.kx as i32;
        for b in &j.blocks {
            if b.i1 == 0 || b.i2 == 0 || b.i1.abs() > kx || b.i2.abs() > kx {
                return Err(Error::Serde(format!("block ({}, {}) outside the index range", b.i1, b.i2)));
            }
            for row in &b.coeffs {
                if row.len() != tr.v + 2 {
                    return Err(Error::Serde("malformed block coefficient row".into()));
                }
                let ell: Vec<i32> = row[..tr.v].iter().map(|&x| x as i32).collect();
                let t = tr
                    .torus_index(&ell)
                    .ok_or_else(|| Error::Serde(format!("torus mode {ell:?} outside the truncation")))?;
                a.block_mut(b.i1, b.i2)[t] = C64::new(row[tr.v], row[tr.v + 1]);
            }
        }
        Ok(a)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let j: OperatorJson = serde_json::from_str(s)?;
        Self::from_json_value(&j, None)
    }
}

/// Plain-norm bound on exponential generators.
const EXP_GUARD: f64 = 1.0;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BlockJson {
    pub i1: i32,
    pub i2: i32,
    pub coeffs: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OperatorJson {
    pub v: usize,
    #[serde(rename = "Kphi")]
    pub kphi: usize,
    #[serde(rename = "Kx")]
    pub kx: usize,
    pub hamiltonian: bool,
    pub blocks: Vec<BlockJson>,
}

/// Operator values on the torus dealiasing grid: one `n x n` matrix per point.
#[derive(Clone, Debug)]
pub(crate) struct OpGrid {
    pub n: usize,
    pub ntg: usize,
    pub np: usize,
    pub data: Vec<C64>,
}

impl OpGrid {
    pub fn from_op(a: &VarCoeffOperator) -> Self {
        let tr = &a.trunc;
        let np = tr.dealias_phi();
        let ntg = np.pow(tr.v as u32);
        let n = a.n;
        let mut data = vec![ZERO; ntg * n * n];
        let mut g = vec![ZERO; ntg];
        for r in 0..n {
            for c in 0..n {
                let b = a.block_at(r, c);
                if b.iter().all(|z| *z == ZERO) {
                    continue;
                }
                tr.torus_to_grid_into(b, np, &mut g);
                for (p, z) in g.iter().enumerate() {
                    data[p * n * n + r * n + c] = *z;
                }
            }
        }
        OpGrid { n, ntg, np, data }
    }

    pub fn to_op(&self, tr: &Arc<Truncation>) -> VarCoeffOperator {
        let mut a = VarCoeffOperator::zeros(tr);
        let n = self.n;
        let mut g = vec![ZERO; self.ntg];
        for r in 0..n {
            for c in 0..n {
                let mut nonzero = false;
                for (p, z) in g.iter_mut().enumerate() {
                    *z = self.data[p * n * n + r * n + c];
                    nonzero |= *z != ZERO;
                }
                if nonzero {
                    tr.torus_from_grid_into(&mut g, self.np, a.block_at_mut(r, c));
                }
            }
        }
        a
    }

    pub fn mul(&self, o: &Self) -> Self {
        let n = self.n;
        let mut data = vec![ZERO; self.data.len()];
        for p in 0..self.ntg {
            let a = &self.data[p * n * n..(p + 1) * n * n];
            let b = &o.data[p * n * n..(p + 1) * n * n];
            let out = &mut data[p * n * n..(p + 1) * n * n];
            matmul(a, b, out, n);
        }
        OpGrid { n, ntg: self.ntg, np: self.np, data }
    }
}

/// `out = a b` for row-major `n x n` complex matrices.
pub(crate) fn matmul(a: &[C64], b: &[C64], out: &mut [C64], n: usize) {
    for r in 0..n {
        let orow = &mut out[r * n..(r + 1) * n];
        orow.iter_mut().for_each(|z| *z = ZERO);
        for k in 0..n {
            let x = a[r * n + k];
            if x == ZERO {
                continue;
            }
            let brow = &b[k * n..(k + 1) * n];
            for (o, y) in orow.iter_mut().zip(brow) {
                *o += x * y;
            }
        }
    }
}
