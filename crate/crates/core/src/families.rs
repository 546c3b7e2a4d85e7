//! Decorated cycles and paths encoded as color words.
//!
//! Letter 0 is a two-edge detour `a - b - a` through a feature vertex,
//! letters `1..=L` are single subject-subject edges of that layer.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::ModelParams;
use crate::thresholds::{sigma_plus, InteractionMatrix, ThresholdError};

/// Default cap on the number of raw words scanned by an enumeration.
pub const DEFAULT_WORD_BUDGET: u128 = 10_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FamilyError {
    #[error("InvalidAleph: {0}")]
    InvalidAleph(String),
    #[error("BudgetExceeded: {words} words exceed the enumeration budget {budget}; reduce aleph or L")]
    BudgetExceeded { words: u128, budget: u128 },
    #[error(transparent)]
    Threshold(#[from] ThresholdError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Topology {
    Cycle,
    Path,
}

impl Topology {
    pub fn name(self) -> &'static str {
        match self {
            Topology::Cycle => "cycle",
            Topology::Path => "path",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ColorWord {
    pub letters: Vec<u8>,
    pub topology: Topology,
}

impl ColorWord {
    pub fn render(&self) -> String {
        self.letters.iter().map(|c| c.to_string()).collect::<Vec<_>>().join("")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FamilyClass {
    pub word: ColorWord,
    pub aut: u64,
    pub dif0: usize,
    pub dif: usize,
    pub counts: Vec<usize>,
    pub xi: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FamilyWeights {
    pub topology: Topology,
    pub aleph: usize,
    pub layers: usize,
    pub classes: Vec<FamilyClass>,
    pub beta: f64,
}

impl FamilyWeights {
    /// Sub-family of classes whose letters all lie in `allowed`, with its own beta.
    pub fn restricted(&self, allowed: &[u8]) -> FamilyWeights {
        let classes: Vec<FamilyClass> = self
            .classes
            .iter()
            .filter(|c| c.word.letters.iter().all(|l| allowed.contains(l)))
            .cloned()
            .collect();
        let beta = beta_of(&classes);
        FamilyWeights {
            classes,
            beta,
            ..self.clone()
        }
    }

    pub fn find(&self, canonical: &[u8]) -> Option<&FamilyClass> {
        self.classes
            .binary_search_by(|c| c.word.letters.as_slice().cmp(canonical))
            .ok()
            .map(|i| &self.classes[i])
    }
}

fn beta_of(classes: &[FamilyClass]) -> f64 {
    classes.iter().map(|c| c.xi * c.xi / c.aut as f64).sum()
}

/// All rotations and reflections of a cyclic word.
pub fn dihedral_images(letters: &[u8]) -> Vec<Vec<u8>> {
    let k = letters.len();
    let mut out = Vec::with_capacity(2 * k);
    for r in 0..k {
        out.push((0..k).map(|i| letters[(i + r) % k]).collect());
        out.push((0..k).map(|i| letters[(r + k - i) % k]).collect());
    }
    out
}

/// Lexicographic minimum over the dihedral orbit, with the orbit size.
pub fn canonical_cycle(letters: &[u8]) -> (Vec<u8>, usize) {
    let mut images = dihedral_images(letters);
    images.sort();
    images.dedup();
    (images[0].clone(), images.len())
}

/// Lexicographic minimum of a path word and its reversal, with `|Aut|`.
pub fn canonical_path(letters: &[u8]) -> (Vec<u8>, u64) {
    let rev: Vec<u8> = letters.iter().rev().cloned().collect();
    if rev == letters {
        (rev, 2)
    } else {
        (rev.min(letters.to_vec()), 1)
    }
}

/// `(dif0, dif)`: adjacent `{0, l}` pairs and adjacent `{l, l'}` pairs with `l != l'`.
pub fn dif_counts(letters: &[u8], topology: Topology) -> (usize, usize) {
    let k = letters.len();
    let pairs = match topology {
        Topology::Cycle => k,
        Topology::Path => k.saturating_sub(1),
    };
    let (mut d0, mut d) = (0, 0);
    for i in 0..pairs {
        let (a, b) = (letters[i], letters[(i + 1) % k]);
        if a != b {
            if a == 0 || b == 0 {
                d0 += 1;
            } else {
                d += 1;
            }
        }
    }
    (d0, d)
}

pub fn letter_counts(letters: &[u8], layers: usize) -> Vec<usize> {
    let mut c = vec![0; layers + 1];
    for &l in letters {
        c[l as usize] += 1;
    }
    c
}

/// Signal weight of a word.
pub fn word_xi(letters: &[u8], topology: Topology, params: &ModelParams) -> f64 {
    let (d0, d) = dif_counts(letters, topology);
    let snr = params.snr_vector();
    let counts = letter_counts(letters, params.layers());
    let mut xi = params.rho.powi((d0 + 2 * d) as i32);
    for (c, s) in counts.iter().zip(&snr) {
        xi *= s.powf(*c as f64 / 2.0);
    }
    xi
}

fn check_budget(aleph: usize, layers: usize, budget: u128) -> Result<(), FamilyError> {
    let words = ((layers + 1) as u128).checked_pow(aleph as u32).unwrap_or(u128::MAX);
    if words > budget {
        return Err(FamilyError::BudgetExceeded { words, budget });
    }
    Ok(())
}

/// Iterates all words of length `aleph` over `0..k` in lexicographic order.
pub(crate) fn for_each_word(aleph: usize, k: usize, mut f: impl FnMut(&[u8])) {
    let mut w = vec![0u8; aleph];
    loop {
        f(&w);
        let mut i = aleph;
        loop {
            if i == 0 {
                return;
            }
            i -= 1;
            if (w[i] as usize) + 1 < k {
                w[i] += 1;
                for x in &mut w[i + 1..] {
                    *x = 0;
                }
                break;
            }
        }
    }
}

fn class_of(letters: &[u8], topology: Topology, aut: u64, params: &ModelParams) -> FamilyClass {
    let (dif0, dif) = dif_counts(letters, topology);
    FamilyClass {
        word: ColorWord {
            letters: letters.to_vec(),
            topology,
        },
        aut,
        dif0,
        dif,
        counts: letter_counts(letters, params.layers()),
        xi: word_xi(letters, topology, params),
    }
}

pub fn enumerate_cycles(aleph: usize, params: &ModelParams) -> Result<FamilyWeights, FamilyError> {
    enumerate_cycles_with_budget(aleph, params, DEFAULT_WORD_BUDGET)
}

pub fn enumerate_cycles_with_budget(
    aleph: usize,
    params: &ModelParams,
    budget: u128,
) -> Result<FamilyWeights, FamilyError> {
    if aleph < 3 {
        return Err(FamilyError::InvalidAleph(format!(
            "decorated cycles need aleph >= 3, got {aleph}"
        )));
    }
    let layers = params.layers();
    check_budget(aleph, layers, budget)?;
    let mut classes = Vec::new();
    for_each_word(aleph, layers + 1, |w| {
        let (canon, orbit) = canonical_cycle(w);
        if canon == w {
            let aut = (2 * aleph / orbit) as u64;
            classes.push(class_of(w, Topology::Cycle, aut, params));
        }
    });
    let beta = beta_of(&classes);
    Ok(FamilyWeights {
        topology: Topology::Cycle,
        aleph,
        layers,
        classes,
        beta,
    })
}

/// Decorated paths with `aleph` edge letters.
///
/// Both leaves of an encoded path are subject vertices whatever the flag, so
/// `leaf_restricted` does not change the result.
pub fn enumerate_paths(
    aleph: usize,
    params: &ModelParams,
    leaf_restricted: bool,
) -> Result<FamilyWeights, FamilyError> {
    let _ = leaf_restricted;
    if aleph < 1 {
        return Err(FamilyError::InvalidAleph("decorated paths need aleph >= 1".into()));
    }
    let layers = params.layers();
    check_budget(aleph, layers, DEFAULT_WORD_BUDGET)?;
    let mut classes = Vec::new();
    for_each_word(aleph, layers + 1, |w| {
        let (canon, aut) = canonical_path(w);
        if canon == w {
            classes.push(class_of(w, Topology::Path, aut, params));
        }
    });
    let beta = beta_of(&classes);
    Ok(FamilyWeights {
        topology: Topology::Path,
        aleph,
        layers,
        classes,
        beta,
    })
}

/// Per-letter factors whose products rebuild the signal weight of any word.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeWeights {
    /// `sqrt(mu^2/gamma)` for letter 0, `sqrt(eps_l^2 lambda_l)` for letter l.
    pub base: Vec<f64>,
    /// 1 for equal letters, rho for `{0, l}`, rho^2 for `{l, l'}`.
    pub junction: Vec<Vec<f64>>,
}

impl EdgeWeights {
    /// Weight of letter `next` following letter `prev`.
    pub fn weight(&self, prev: usize, next: usize) -> f64 {
        self.base[next] * self.junction[prev][next]
    }

    /// Rebuilds the signal weight of a word from its letters and junctions.
    pub fn word_product(&self, letters: &[u8], topology: Topology) -> f64 {
        let k = letters.len();
        let mut v: f64 = letters.iter().map(|&c| self.base[c as usize]).product();
        let junctions = match topology {
            Topology::Cycle => k,
            Topology::Path => k.saturating_sub(1),
        };
        for i in 0..junctions {
            v *= self.junction[letters[i] as usize][letters[(i + 1) % k] as usize];
        }
        v
    }
}

pub fn per_edge_weights(params: &ModelParams) -> EdgeWeights {
    let k = params.layers() + 1;
    let base = params.snr_vector().iter().map(|s| s.sqrt()).collect();
    let (r, r2) = (params.rho, params.rho * params.rho);
    let junction = (0..k)
        .map(|a| {
            (0..k)
                .map(|b| {
                    if a == b {
                        1.0
                    } else if a == 0 || b == 0 {
                        r
                    } else {
                        r2
                    }
                })
                .collect()
        })
        .collect();
    EdgeWeights { base, junction }
}

/// Beta computed word by word: each word contributes `xi^2 / |Aut|` divided by
/// its orbit size, with `|Aut|` counted as the stabilizer of the word.
pub fn beta_over_words(aleph: usize, params: &ModelParams, topology: Topology) -> f64 {
    let k = params.layers() + 1;
    let mut total = 0.0;
    for_each_word(aleph, k, |w| {
        let group: Vec<Vec<u8>> = match topology {
            Topology::Cycle => dihedral_images(w),
            Topology::Path => vec![w.to_vec(), w.iter().rev().cloned().collect()],
        };
        let stab = group.iter().filter(|g| g.as_slice() == w).count();
        let orbit = group.len() / stab;
        let xi = word_xi(w, topology, params);
        total += xi * xi / stab as f64 / orbit as f64;
    });
    total
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BetaBoundsEntry {
    pub aleph: usize,
    pub beta: f64,
    /// `beta / sigma^aleph`.
    pub ratio: f64,
    /// `aleph^2 beta / sigma^aleph` for cycles.
    pub corrected_ratio: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BetaBoundsReport {
    pub sigma_plus: f64,
    pub entries: Vec<BetaBoundsEntry>,
    /// max / min of `ratio` across the sequence.
    pub band: f64,
    /// max / min of `corrected_ratio`, cycles only.
    pub corrected_band: Option<f64>,
    /// Smallest D with every applicable bound holding.
    pub fitted_d: f64,
    pub violation: bool,
}

fn spread(v: &[f64]) -> f64 {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = v.iter().cloned().fold(f64::INFINITY, f64::min);
    max / min
}

/// Ratios of beta to `sigma_plus^aleph` over a sequence of families.
///
/// `violation` is set when either band exceeds `band_limit`.
pub fn beta_bounds_check(
    weights: &[FamilyWeights],
    m: &InteractionMatrix,
    band_limit: f64,
) -> Result<BetaBoundsReport, FamilyError> {
    let sigma = sigma_plus(m)?;
    let mut entries = Vec::new();
    let mut d: f64 = 1.0;
    for w in weights {
        let ratio = w.beta / sigma.powi(w.aleph as i32);
        let corrected = match w.topology {
            Topology::Cycle => Some(ratio * (w.aleph * w.aleph) as f64),
            Topology::Path => None,
        };
        d = d.max(ratio);
        d = d.max(1.0 / corrected.unwrap_or(ratio));
        entries.push(BetaBoundsEntry {
            aleph: w.aleph,
            beta: w.beta,
            ratio,
            corrected_ratio: corrected,
        });
    }
    let ratios: Vec<f64> = entries.iter().map(|e| e.ratio).collect();
    let band = spread(&ratios);
    let corrected: Vec<f64> = entries.iter().filter_map(|e| e.corrected_ratio).collect();
    let corrected_band = (!corrected.is_empty()).then(|| spread(&corrected));
    let violation = !(band <= band_limit) || corrected_band.is_some_and(|b| !(b <= band_limit));
    Ok(BetaBoundsReport {
        sigma_plus: sigma,
        entries,
        band,
        corrected_band,
        fitted_d: d,
        violation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::thresholds::{interaction_matrix, word_recursion};

    fn params(layers: usize) -> ModelParams {
        ModelParams {
            n: 100,
            p: 50,
            mu: 0.7,
            rho: 0.6,
            lambda: (0..layers).map(|l| 3.0 + l as f64).collect(),
            epsilon: (0..layers).map(|l| 0.5 - 0.1 * l as f64).collect(),
        }
    }

    #[test]
    fn small_cycle_classes() {
        let w = enumerate_cycles(3, &params(1)).unwrap();
        let words: Vec<String> = w.classes.iter().map(|c| c.word.render()).collect();
        assert_eq!(words, ["000", "001", "011", "111"]);
        assert_eq!(w.classes[0].aut, 6);
        assert_eq!(w.classes[3].aut, 6);
        assert_eq!(w.classes[3].dif0 + w.classes[3].dif, 0);
        assert_eq!(w.classes[1].aut, 2);
        assert!(matches!(
            enumerate_cycles(2, &params(1)),
            Err(FamilyError::InvalidAleph(_))
        ));
    }

    #[test]
    fn figure_examples() {
        // Cycle with colored edges and zero-detours as drawn in the decorated-graph figure.
        let cyc = [0u8, 1, 2, 0, 3, 3, 1, 1, 2];
        assert_eq!(dif_counts(&cyc, Topology::Cycle), (4, 3));
        let path = [0u8, 1, 0, 1, 2, 3, 3, 0];
        assert_eq!(dif_counts(&path, Topology::Path), (4, 2));
        assert_eq!(dif_counts(&[0, 1, 0, 1], Topology::Path), (3, 0));
    }

    #[test]
    fn path_examples() {
        let p = params(1);
        let w = enumerate_paths(1, &p, false).unwrap();
        assert_eq!(w.classes.len(), 2);
        assert!(w.classes.iter().all(|c| c.aut == 2));
        let want = (p.spike_snr() + p.layer_snr(0)) / 2.0;
        assert!((w.beta - want).abs() < 1e-15);
        assert_eq!(canonical_path(&[1, 0, 1]).1, 2);
        assert_eq!(canonical_path(&[1, 2]).1, 1);
        assert_eq!(canonical_path(&[2, 1]).0, vec![1, 2]);
    }

    #[test]
    fn leaf_flag_is_vacuous() {
        let p = params(2);
        for a in 1..6 {
            assert_eq!(
                enumerate_paths(a, &p, true).unwrap(),
                enumerate_paths(a, &p, false).unwrap()
            );
        }
    }

    #[test]
    fn orbit_stabilizer() {
        for layers in 0..3 {
            let p = params(layers);
            let k = (layers + 1) as u64;
            for a in 3..8 {
                let w = enumerate_cycles(a, &p).unwrap();
                let tot: u64 = w.classes.iter().map(|c| 2 * a as u64 / c.aut).sum();
                assert_eq!(tot, k.pow(a as u32));
                assert!(w.classes.iter().all(|c| (2 * a as u64) % c.aut == 0));
            }
            for a in 1..8 {
                let w = enumerate_paths(a, &p, false).unwrap();
                let tot: u64 = w.classes.iter().map(|c| 2 / c.aut).sum();
                assert_eq!(tot, k.pow(a as u32));
            }
        }
    }

    #[test]
    fn beta_two_code_paths() {
        let p = params(2);
        for a in 3..8 {
            let w = enumerate_cycles(a, &p).unwrap();
            let b = beta_over_words(a, &p, Topology::Cycle);
            assert!((w.beta - b).abs() <= 1e-12 * b);
        }
        for a in 1..8 {
            let w = enumerate_paths(a, &p, false).unwrap();
            let b = beta_over_words(a, &p, Topology::Path);
            assert!((w.beta - b).abs() <= 1e-12 * b);
        }
    }

    #[test]
    fn beta_matches_matrix_identities() {
        let p = params(2);
        let m = interaction_matrix(&p).entries;
        for a in 3..8 {
            let w = enumerate_cycles(a, &p).unwrap();
            let tr = m.pow(a as u32).trace() / (2 * a) as f64;
            assert!((w.beta - tr).abs() <= 1e-12 * tr);
        }
        for a in 1..8 {
            let w = enumerate_paths(a, &p, false).unwrap();
            let s: f64 = word_recursion(&p, a).iter().sum::<f64>() / 2.0;
            assert!((w.beta - s).abs() <= 1e-12 * s);
        }
    }

    #[test]
    fn per_edge_reconstruction() {
        let p = params(2);
        let e = per_edge_weights(&p);
        assert!((e.weight(1, 1) - p.layer_snr(0).sqrt()).abs() < 1e-15);
        assert!((e.weight(0, 2) - p.rho * p.layer_snr(1).sqrt()).abs() < 1e-15);
        assert!((e.weight(2, 0) - p.rho * p.spike_snr().sqrt()).abs() < 1e-15);
        for a in 1..=6 {
            for topo in [Topology::Cycle, Topology::Path] {
                for_each_word(a, 3, |w| {
                    let x = word_xi(w, topo, &p);
                    let y = e.word_product(w, topo);
                    assert!((x - y).abs() <= 1e-12 * x.abs().max(1e-300));
                });
            }
        }
    }

    #[test]
    fn bounds_report_flat_case() {
        let p = ModelParams {
            n: 100,
            p: 50,
            mu: 1.3,
            rho: 0.0,
            lambda: vec![],
            epsilon: vec![],
        };
        let m = interaction_matrix(&p);
        let ws: Vec<_> = (1..7).map(|a| enumerate_paths(a, &p, false).unwrap()).collect();
        let r = beta_bounds_check(&ws, &m, 20.0).unwrap();
        assert!((r.band - 1.0).abs() < 1e-12);
        assert!(!r.violation);
        assert!(r.entries.iter().all(|e| (e.ratio - 0.5).abs() < 1e-12));
    }

    #[test]
    fn budget_and_restriction() {
        let p = params(3);
        assert!(matches!(
            enumerate_cycles_with_budget(6, &p, 1000),
            Err(FamilyError::BudgetExceeded { words: 4096, .. })
        ));
        let w = enumerate_cycles(4, &p).unwrap();
        let mono = w.restricted(&[2]);
        assert_eq!(mono.classes.len(), 1);
        let s = p.layer_snr(1);
        assert!((mono.beta - s.powi(4) / 8.0).abs() < 1e-14);
        let found = w.find(&[0, 0, 1, 1]).unwrap();
        assert_eq!(found.aut, 2);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn dif_invariant_under_symmetry(letters in proptest::collection::vec(0u8..4, 3..10)) {
                let base = dif_counts(&letters, Topology::Cycle);
                for img in dihedral_images(&letters) {
                    prop_assert_eq!(dif_counts(&img, Topology::Cycle), base);
                }
                let rev: Vec<u8> = letters.iter().rev().cloned().collect();
                prop_assert_eq!(dif_counts(&rev, Topology::Path), dif_counts(&letters, Topology::Path));
                let (c0, c1) = dif_counts(&letters, Topology::Cycle);
                prop_assert!(c0 + c1 <= letters.len());
            }

            #[test]
            fn canonical_is_orbit_invariant(letters in proptest::collection::vec(0u8..3, 3..9)) {
                let (canon, orbit) = canonical_cycle(&letters);
                prop_assert_eq!((2 * letters.len()) % orbit, 0);
                for img in dihedral_images(&letters) {
                    prop_assert_eq!(&canonical_cycle(&img).0, &canon);
                }
            }
        }
    }
}
