//! Convex-coverage-set geometry: corner weights, dominance pruning,
//! scalarisation, the linear-to-convex feature transform and weight grids.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{dot, FeatureMap, TabularMcp, TaskWeight};

/// Two vectors closer than this (L∞) are the same.
pub const DEDUP_TOL: f64 = 1e-9;

/// Default slack when deciding dominance.
pub const DOMINANCE_TOL: f64 = 1e-9;

/// Largest feature dimension handled by [`corner_weights`].
pub const MAX_CORNER_DIM: usize = 6;

/// Largest number of constraint subsets [`corner_weights`] will enumerate.
pub const MAX_CORNER_SUBSETS: u128 = 5_000_000;

fn binomial(n: usize, k: usize) -> u128 {
    (0..k as u128).fold(1u128, |acc, i| acc * (n as u128 - i) / (i + 1))
}

pub fn linf(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

/// A set of SF vectors with stable ids.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SFSet {
    ids: Vec<usize>,
    vectors: Vec<Vec<f64>>,
}

impl SFSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Vectors get ids `0..n`; later near-duplicates are dropped.
    pub fn from_vectors(vectors: impl IntoIterator<Item = Vec<f64>>) -> Self {
        let mut set = Self::new();
        for (i, v) in vectors.into_iter().enumerate() {
            set.insert(i, v);
        }
        set
    }

    /// Adds `v` under `id` unless an equal vector is present; returns whether
    /// it was added.
    pub fn insert(&mut self, id: usize, v: Vec<f64>) -> bool {
        if self.vectors.iter().any(|u| linf(u, &v) < DEDUP_TOL) {
            return false;
        }
        self.ids.push(id);
        self.vectors.push(v);
        true
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn vectors(&self) -> &[Vec<f64>] {
        &self.vectors
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &[f64])> {
        self.ids.iter().copied().zip(self.vectors.iter().map(|v| v.as_slice()))
    }

    pub fn dim(&self) -> Option<usize> {
        self.vectors.first().map(|v| v.len())
    }

    fn filtered(&self, keep: impl Fn(usize) -> bool) -> Self {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| keep(i)).collect();
        Self {
            ids: idx.iter().map(|&i| self.ids[i]).collect(),
            vectors: idx.iter().map(|&i| self.vectors[i].clone()).collect(),
        }
    }
}

/// Vertices of the upper envelope of `w ↦ max ψ·w` over the simplex.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CornerWeightSet {
    pub weights: Vec<Vec<f64>>,
    /// Envelope value at each weight (`-∞` for an empty set).
    pub values: Vec<f64>,
}

impl CornerWeightSet {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

fn simplex_extremes(d: usize) -> Vec<Vec<f64>> {
    (0..d)
        .map(|i| {
            let mut e = vec![0.0; d];
            e[i] = 1.0;
            e
        })
        .collect()
}

/// Corner weights of `Ψ` over the `d`-simplex.
///
/// Vertices of `{(w, v) : ψ·w ≤ v ∀ψ, Σw = 1, w ≥ 0}` are enumerated by
/// making `d` of the `|Ψ| + d` inequalities tight together with the simplex
/// equality. The empty set yields the simplex extremes. Output is sorted
/// lexicographically by `w`.
pub fn corner_weights(psi: &SFSet, d: usize) -> Result<CornerWeightSet> {
    if d < 2 {
        return Err(Error::Scope(format!("corner weights need d >= 2, got {d}")));
    }
    if d > MAX_CORNER_DIM || binomial(psi.len() + d, d) > MAX_CORNER_SUBSETS {
        return Err(Error::Scope(format!(
            "corner-weight enumeration supports d <= {MAX_CORNER_DIM} and at most {MAX_CORNER_SUBSETS} \
             constraint subsets (got d = {d}, |Ψ| = {}); prune the set or reduce the feature dimension",
            psi.len()
        )));
    }
    if let Some(k) = psi.vectors.iter().map(|v| v.len()).find(|&k| k != d) {
        return Err(Error::DimensionMismatch { expected: d, found: k });
    }
    if psi.is_empty() {
        let weights = simplex_extremes(d);
        let values = vec![f64::NEG_INFINITY; d];
        return Ok(CornerWeightSet { weights, values });
    }

    let n = psi.len();
    let m = n + d;
    // constraint row j: ψ_j·w - v ≤ 0 for j < n, -w_{j-n} ≤ 0 otherwise
    let solve_subset = |subset: &[usize]| -> Option<Vec<f64>> {
        let mut a = DMatrix::<f64>::zeros(d + 1, d + 1);
        let mut b = DVector::<f64>::zeros(d + 1);
        for (row, &j) in subset.iter().enumerate() {
            if j < n {
                for k in 0..d {
                    a[(row, k)] = psi.vectors[j][k];
                }
                a[(row, d)] = -1.0;
            } else {
                a[(row, j - n)] = 1.0;
            }
        }
        for k in 0..d {
            a[(d, k)] = 1.0;
        }
        b[d] = 1.0;
        let scale: f64 = a.row_iter().map(|r| r.norm()).product();
        let lu = a.lu();
        if lu.determinant().abs() < 1e-12 * scale {
            return None;
        }
        let x = lu.solve(&b)?;
        let w: Vec<f64> = x.as_slice()[..d].to_vec();
        let v = x[d];
        if w.iter().any(|&wi| wi < -DEDUP_TOL || !wi.is_finite()) {
            return None;
        }
        if psi.vectors.iter().any(|p| dot(p, &w) > v + DEDUP_TOL * (1.0 + v.abs())) {
            return None;
        }
        let mut w: Vec<f64> = w.into_iter().map(|x| if x.abs() < 1e-12 { 0.0 } else { x }).collect();
        let s: f64 = w.iter().sum();
        w.iter_mut().for_each(|x| *x /= s);
        Some(w)
    };

    let found: Vec<Vec<f64>> = (0..m)
        .into_par_iter()
        .flat_map_iter(|first| {
            let mut out = Vec::new();
            let mut rest: Vec<usize> = (first + 1..first + d).collect();
            loop {
                if rest.last().is_none_or(|&l| l < m) {
                    let mut subset = Vec::with_capacity(d);
                    subset.push(first);
                    subset.extend_from_slice(&rest);
                    if let Some(w) = solve_subset(&subset) {
                        out.push(w);
                    }
                }
                if !next_combination(&mut rest, first + 1, m) {
                    break;
                }
            }
            out
        })
        .collect();

    let mut weights: Vec<Vec<f64>> = Vec::new();
    let mut sorted = found;
    sorted.sort_by(|a, b| lex_cmp(a, b));
    for w in sorted {
        if !weights.iter().any(|u| linf(u, &w) < DEDUP_TOL) {
            weights.push(w);
        }
    }
    weights.sort_by(|a, b| lex_cmp(a, b));
    let values = weights.iter().map(|w| scalarized_max(psi, w).map(|(v, _)| v)).collect::<Result<_>>()?;
    Ok(CornerWeightSet { weights, values })
}

/// Advances `comb` (strictly increasing, entries in `lo..hi`) to the next
/// combination; false when exhausted.
fn next_combination(comb: &mut [usize], lo: usize, hi: usize) -> bool {
    let k = comb.len();
    if k == 0 {
        return false;
    }
    if comb.iter().any(|&c| c >= hi) || lo > hi {
        return false;
    }
    let mut i = k;
    while i > 0 {
        i -= 1;
        if comb[i] < hi - (k - i) {
            comb[i] += 1;
            for j in i + 1..k {
                comb[j] = comb[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

pub(crate) fn lex_cmp(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.partial_cmp(y) {
            Some(std::cmp::Ordering::Equal) | None => continue,
            Some(o) => return o,
        }
    }
    a.len().cmp(&b.len())
}

/// `(max_ψ ψ·w, id of the first maximiser)`.
pub fn scalarized_max(psi: &SFSet, w: &[f64]) -> Result<(f64, usize)> {
    let mut best: Option<(f64, usize)> = None;
    for (id, v) in psi.iter() {
        if v.len() != w.len() {
            return Err(Error::DimensionMismatch { expected: v.len(), found: w.len() });
        }
        let val = dot(v, w);
        if best.is_none_or(|(b, _)| val > b + crate::planner::TIE_TOL) {
            best = Some((val, id));
        }
    }
    best.ok_or_else(|| Error::Degenerate("scalarized max over an empty set".into()))
}

/// `max_{w ∈ Δ} (ψ_i·w - max_{j≠i} ψ_j·w)`, the best margin by which `ψ_i`
/// beats the rest of the set. `+∞` for a singleton.
pub fn dominance_margin(psi: &SFSet, i: usize) -> Result<f64> {
    let d = psi.vectors[i].len();
    let others = psi.filtered(|j| j != i);
    if others.is_empty() {
        return Ok(f64::INFINITY);
    }
    let corners = corner_weights(&others, d)?;
    Ok(corners
        .weights
        .iter()
        .zip(&corners.values)
        .map(|(w, v)| dot(&psi.vectors[i], w) - v)
        .fold(f64::NEG_INFINITY, f64::max))
}

/// Drops vectors that are not a best response to any simplex weight.
///
/// Every vector that reaches the envelope does so at one of its corner
/// weights, so a vector survives when it is within `tol` of the envelope at
/// some corner. Vectors that only touch the envelope are kept. Order is
/// preserved.
pub fn remove_dominated(psi: &SFSet, tol: f64) -> Result<SFSet> {
    let Some(d) = psi.dim() else { return Ok(psi.clone()) };
    if psi.len() == 1 {
        return Ok(psi.clone());
    }
    let corners = corner_weights(psi, d)?;
    let keep: Vec<bool> = psi
        .vectors
        .iter()
        .map(|v| corners.weights.iter().zip(&corners.values).any(|(w, env)| dot(v, w) >= env - tol))
        .collect();
    Ok(psi.filtered(|i| keep[i]))
}

/// The minimal coverage set: vectors that are the unique best response on a
/// full-dimensional region (margin strictly above `tol`).
pub fn minimal_ccs(psi: &SFSet, tol: f64) -> Result<SFSet> {
    let margins = margins(psi)?;
    Ok(psi.filtered(|i| margins[i] > tol))
}

fn margins(psi: &SFSet) -> Result<Vec<f64>> {
    if psi.len() <= 1 {
        return Ok(vec![f64::INFINITY; psi.len()]);
    }
    (0..psi.len()).map(|i| dominance_margin(psi, i)).collect()
}

/// Rewrites a linear task as a convex one over doubled features.
///
/// Returns `(φ̃, w̃, c)` with `φ̃ = [φ; -φ]`, `w̃ = [w⁺; w⁻] / c`,
/// `c = Σ(w⁺ + w⁻)`, so that `φ̃·w̃ = (φ·w) / c` on every edge.
pub fn linear_to_convex(mcp: &TabularMcp, phi: &FeatureMap, w: &TaskWeight) -> Result<(FeatureMap, TaskWeight, f64)> {
    let d = phi.dim();
    if w.dim() != d {
        return Err(Error::DimensionMismatch { expected: d, found: w.dim() });
    }
    let c: f64 = w.as_slice().iter().map(|x| x.abs()).sum();
    if c == 0.0 {
        return Err(Error::Degenerate("zero task weight has no convex rewrite".into()));
    }
    let mut wt = vec![0.0; 2 * d];
    for (i, &x) in w.as_slice().iter().enumerate() {
        wt[i] = x.max(0.0) / c;
        wt[d + i] = (-x).max(0.0) / c;
    }
    let mut values = Vec::with_capacity(phi.values().len() * 2);
    for e in 0..mcp.n_edges() {
        let f = phi.edge(e);
        values.extend_from_slice(f);
        values.extend(f.iter().map(|x| -x));
    }
    let phi2 = FeatureMap::new(mcp, 2 * d, values)?;
    // re-normalise against rounding so the simplex check holds
    let s: f64 = wt.iter().sum();
    wt.iter_mut().for_each(|x| *x /= s);
    Ok((phi2, TaskWeight::convex(wt)?, c))
}

/// All `(k_1/H, ..., k_d/H)` with `Σk = H`, first coordinate descending.
pub fn simplex_grid(d: usize, h: usize) -> Vec<Vec<f64>> {
    if d == 0 {
        return Vec::new();
    }
    if h == 0 {
        return vec![vec![1.0 / d as f64; d]];
    }
    let mut out = Vec::new();
    let mut ks = vec![0usize; d];
    fill_lattice(&mut out, &mut ks, 0, h, h);
    out
}

fn fill_lattice(out: &mut Vec<Vec<f64>>, ks: &mut [usize], depth: usize, left: usize, h: usize) {
    if depth == ks.len() - 1 {
        ks[depth] = left;
        out.push(ks.iter().map(|&k| k as f64 / h as f64).collect());
        return;
    }
    for k in (0..=left).rev() {
        ks[depth] = k;
        fill_lattice(out, ks, depth + 1, left - k, h);
    }
}

/// Integer lattice behind [`simplex_grid`]; entries sum to `h` exactly.
pub fn simplex_lattice(d: usize, h: usize) -> Vec<Vec<usize>> {
    simplex_grid(d, h).into_iter().map(|w| w.iter().map(|x| (x * h as f64).round() as usize).collect()).collect()
}

/// Unit chords: simplex lattice points, optionally under every sign pattern,
/// L2-normalised and de-duplicated.
pub fn chord_grid(d: usize, h: usize, signed: bool) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::new();
    let patterns = if signed { 1usize << d } else { 1 };
    for p in simplex_grid(d, h) {
        for signs in 0..patterns {
            let z: Vec<f64> = p.iter().enumerate().map(|(i, &x)| if signs >> i & 1 == 1 { -x } else { x }).collect();
            let norm = dot(&z, &z).sqrt();
            if norm == 0.0 {
                continue;
            }
            let z: Vec<f64> = z.iter().map(|x| x / norm).collect();
            if !out.iter().any(|u| linf(u, &z) < DEDUP_TOL) {
                out.push(z);
            }
        }
    }
    out
}

/// Default chord-grid resolution for a feature dimension.
pub fn default_chord_resolution(d: usize) -> usize {
    if d <= 3 {
        8
    } else {
        4
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_weights(got: &CornerWeightSet, want: &[Vec<f64>]) {
        assert_eq!(got.len(), want.len(), "{:?}", got.weights);
        for w in want {
            assert!(got.weights.iter().any(|g| linf(g, w) < 1e-12), "missing {w:?} in {:?}", got.weights);
        }
    }

    #[test]
    fn corners_of_two_axes() {
        let psi = SFSet::from_vectors([vec![1.0, 0.0], vec![0.0, 1.0]]);
        let c = corner_weights(&psi, 2).unwrap();
        assert_weights(&c, &[vec![1.0, 0.0], vec![0.0, 1.0], vec![0.5, 0.5]]);
        let mid = c.weights.iter().position(|w| linf(w, &[0.5, 0.5]) < 1e-12).unwrap();
        assert!((c.values[mid] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn corners_of_single_vector_are_extremes() {
        let psi = SFSet::from_vectors([vec![1.0, 1.0]]);
        assert_weights(&corner_weights(&psi, 2).unwrap(), &[vec![1.0, 0.0], vec![0.0, 1.0]]);
    }

    #[test]
    fn corners_of_empty_set_are_extremes() {
        let c = corner_weights(&SFSet::new(), 3).unwrap();
        assert_weights(&c, &simplex_extremes(3));
    }

    #[test]
    fn corners_scope_errors() {
        let psi = SFSet::from_vectors([vec![1.0; 7]]);
        let err = corner_weights(&psi, 7).unwrap_err();
        assert!(err.to_string().contains("d <= 6"), "{err}");
        let many = SFSet::from_vectors((0..400).map(|i| vec![i as f64, 1.0, 0.5, 0.25]));
        assert!(matches!(corner_weights(&many, 4), Err(Error::Scope(_))));
    }

    #[test]
    fn corners_three_dims() {
        let psi = SFSet::from_vectors([vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]]);
        let c = corner_weights(&psi, 3).unwrap();
        // extremes, three edge midpoints and the centroid
        assert_eq!(c.len(), 7);
        assert!(c.weights.iter().any(|w| linf(w, &[1.0 / 3.0; 3]) < 1e-12));
    }

    #[test]
    fn remove_dominated_drops_interior_vector() {
        let psi = SFSet::from_vectors([vec![1.0, 0.0], vec![0.0, 1.0], vec![0.4, 0.4]]);
        let kept = remove_dominated(&psi, DOMINANCE_TOL).unwrap();
        assert_eq!(kept.ids(), &[0, 1]);
    }

    #[test]
    fn remove_dominated_keeps_touching_vector_but_minimal_drops_it() {
        let psi = SFSet::from_vectors([vec![1.0, 0.0], vec![0.0, 1.0], vec![0.5, 0.5]]);
        assert_eq!(remove_dominated(&psi, DOMINANCE_TOL).unwrap().len(), 3);
        assert_eq!(minimal_ccs(&psi, DOMINANCE_TOL).unwrap().ids(), &[0, 1]);
    }

    #[test]
    fn remove_dominated_singleton_and_duplicates() {
        let psi = SFSet::from_vectors([vec![0.3, 0.1]]);
        assert_eq!(remove_dominated(&psi, 0.0).unwrap(), psi);
        let dup = SFSet::from_vectors([vec![0.3, 0.1], vec![0.3, 0.1 + 1e-12]]);
        assert_eq!(dup.len(), 1);
    }

    #[test]
    fn scalarized_max_ties_go_low() {
        let psi = SFSet::from_vectors([vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert_eq!(scalarized_max(&psi, &[0.25, 0.75]).unwrap(), (0.75, 1));
        assert_eq!(scalarized_max(&psi, &[0.5, 0.5]).unwrap(), (0.5, 0));
        assert!(scalarized_max(&psi, &[1.0]).is_err());
    }

    #[test]
    fn simplex_grid_counts_and_order() {
        let g = simplex_grid(2, 4);
        assert_eq!(g, vec![vec![1.0, 0.0], vec![0.75, 0.25], vec![0.5, 0.5], vec![0.25, 0.75], vec![0.0, 1.0]]);
        assert_eq!(simplex_grid(3, 2).len(), 6);
        assert_eq!(simplex_grid(4, 5).len(), 56);
        assert!(simplex_lattice(4, 5).iter().all(|k| k.iter().sum::<usize>() == 5));
    }

    #[test]
    fn chord_grid_unsigned_axes() {
        assert_eq!(chord_grid(2, 1, false), vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
    }

    #[test]
    fn chord_grid_signed_contains_negatives() {
        let z = chord_grid(2, 2, true);
        let r = 1.0 / 2f64.sqrt();
        for want in [[-1.0, 0.0], [0.0, -1.0], [r, r], [-r, -r], [r, -r]] {
            assert!(z.iter().any(|u| linf(u, &want) < 1e-12), "missing {want:?}");
        }
        assert_eq!(z.len(), 8);
        for u in &z {
            assert!((dot(u, u).sqrt() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn linear_to_convex_mixed_sign() {
        let (mcp, phi) = crate::mdp::build_counterexample();
        let w = TaskWeight::linear(vec![1.0, -1.0]).unwrap();
        let (phi2, w2, c) = linear_to_convex(&mcp, &phi, &w).unwrap();
        assert_eq!(c, 2.0);
        assert_eq!(w2.as_slice(), &[0.5, 0.0, 0.0, 0.5]);
        assert_eq!(phi2.dim(), 4);
        let zero = TaskWeight::linear(vec![0.0, 0.0]).unwrap();
        assert!(linear_to_convex(&mcp, &phi, &zero).is_err());
    }

    #[test]
    fn linear_to_convex_nonnegative_is_identity_scaled() {
        let (mcp, phi) = crate::mdp::build_counterexample();
        let w = TaskWeight::convex(vec![0.25, 0.75]).unwrap();
        let (_, w2, c) = linear_to_convex(&mcp, &phi, &w).unwrap();
        assert_eq!(c, 1.0);
        assert_eq!(w2.as_slice(), &[0.25, 0.75, 0.0, 0.0]);
    }

    #[test]
    fn combination_walk_is_complete() {
        let mut count = 0;
        for first in 0..6 {
            let mut rest: Vec<usize> = (first + 1..first + 3).collect();
            loop {
                if rest.last().is_none_or(|&l| l < 6) {
                    count += 1;
                }
                if !next_combination(&mut rest, first + 1, 6) {
                    break;
                }
            }
        }
        assert_eq!(count, 20); // C(6, 3)
    }
}
