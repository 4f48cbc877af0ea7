//! The data-sharing game: coalitions, valuations, characteristic tables,
//! VCG-like surplus/payments, and an analytic accuracy oracle for testing
//! the mechanism without any training.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hard cap on participants imposed by the bit-set representation.
pub const MAX_PARTICIPANTS: usize = 30;

/// A subset of the participant set `{0..n-1}`, stored as a bit-set.
///
/// Iteration over members is always in ascending index order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Coalition {
    bits: u32,
    n: u8,
}

impl Coalition {
    /// The empty coalition over `n` participants.
    pub fn empty(n: usize) -> Self {
        assert!(n <= MAX_PARTICIPANTS, "at most {MAX_PARTICIPANTS} participants");
        Self { bits: 0, n: n as u8 }
    }

    /// The grand coalition `N = {0..n-1}`.
    pub fn full(n: usize) -> Self {
        assert!(n <= MAX_PARTICIPANTS, "at most {MAX_PARTICIPANTS} participants");
        let bits = if n == 0 { 0 } else { (1u32 << n) - 1 };
        Self { bits, n: n as u8 }
    }

    /// Coalition from a raw bitmask.
    pub fn from_bits(bits: u32, n: usize) -> Self {
        let full = Self::full(n);
        assert_eq!(bits & !full.bits, 0, "bitmask exceeds participant range");
        Self { bits, n: n as u8 }
    }

    pub fn singleton(i: usize, n: usize) -> Self {
        Self::from_bits(1u32 << i, n)
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn n(&self) -> usize {
        self.n as usize
    }

    pub fn size(&self) -> usize {
        self.bits.count_ones() as usize
    }

    pub fn is_empty(&self) -> bool {
        self.bits == 0
    }

    pub fn contains(&self, i: usize) -> bool {
        i < self.n() && (self.bits >> i) & 1 == 1
    }

    pub fn with(&self, i: usize) -> Self {
        Self::from_bits(self.bits | (1 << i), self.n())
    }

    /// The coalition without participant `i`.
    pub fn without(&self, i: usize) -> Self {
        assert!(i < self.n());
        Self {
            bits: self.bits & !(1 << i),
            n: self.n,
        }
    }

    pub fn is_subset_of(&self, other: &Coalition) -> bool {
        self.bits & !other.bits == 0
    }

    /// Members in ascending index order.
    pub fn members(&self) -> impl Iterator<Item = usize> + '_ {
        let bits = self.bits;
        (0..self.n()).filter(move |i| (bits >> i) & 1 == 1)
    }

    /// All `2^n - 1` nonempty coalitions in ascending bitmask order.
    pub fn all_nonempty(n: usize) -> impl Iterator<Item = Coalition> {
        assert!(n <= MAX_PARTICIPANTS);
        (1u32..=Coalition::full(n).bits).map(move |bits| Coalition { bits, n: n as u8 })
    }

    /// All supersets of `self` (including itself) within `{0..n-1}`.
    pub fn supersets(&self) -> Vec<Coalition> {
        let complement = Coalition::full(self.n()).bits & !self.bits;
        let mut out = Vec::with_capacity(1 << complement.count_ones());
        // enumerate submasks of the complement via the carry-ripple trick
        let mut sub = 0u32;
        loop {
            out.push(Coalition {
                bits: self.bits | sub,
                n: self.n,
            });
            if sub == complement {
                break;
            }
            sub = (sub.wrapping_sub(complement)) & complement;
        }
        out
    }
}

impl fmt::Display for Coalition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (k, i) in self.members().enumerate() {
            if k > 0 {
                write!(f, ",")?;
            }
            write!(f, "{i}")?;
        }
        write!(f, "}}")
    }
}

/// Per-round valuation parameters: preference constants, server budget, and
/// each participant's solo-model accuracy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValuationParams {
    pub k: Vec<f64>,
    pub b0: f64,
    pub solo_accuracy: Vec<f64>,
}

impl ValuationParams {
    pub fn new(k: Vec<f64>, b0: f64, solo_accuracy: Vec<f64>) -> Result<Self> {
        if k.len() != solo_accuracy.len() {
            return Err(Error::parameter("k and solo_accuracy lengths differ"));
        }
        if k.iter().any(|&ki| !(ki > 0.0) || !ki.is_finite()) {
            return Err(Error::parameter("every preference k_i must be positive"));
        }
        if !(b0 >= 0.0) || !b0.is_finite() {
            return Err(Error::parameter("budget b0 must be non-negative"));
        }
        for &a in &solo_accuracy {
            check_accuracy(a)?;
        }
        Ok(Self {
            k,
            b0,
            solo_accuracy,
        })
    }

    pub fn n(&self) -> usize {
        self.k.len()
    }
}

fn check_accuracy(a: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&a) || a.is_nan() {
        return Err(Error::parameter(format!("accuracy {a} outside [0, 1]")));
    }
    Ok(())
}

/// A participant's valuation of a model: `k * max(global - solo, 0)`.
///
/// The expectation over training randomness is approximated by the realized
/// evaluation (optionally averaged over repeats upstream).
pub fn valuation(global_accuracy: f64, solo_accuracy: f64, k: f64) -> Result<f64> {
    check_accuracy(global_accuracy)?;
    check_accuracy(solo_accuracy)?;
    if !(k > 0.0) || !k.is_finite() {
        return Err(Error::parameter("preference k must be positive"));
    }
    Ok(k * (global_accuracy - solo_accuracy).max(0.0))
}

/// Characteristic value of a coalition: `b0` plus member valuations of the
/// coalition model, and zero for the empty coalition.
pub fn characteristic_value(
    coalition: Coalition,
    coalition_accuracy: f64,
    vp: &ValuationParams,
) -> Result<f64> {
    if coalition.is_empty() {
        return Ok(0.0);
    }
    check_accuracy(coalition_accuracy)?;
    let mut w = vp.b0;
    for i in coalition.members() {
        w += valuation(coalition_accuracy, vp.solo_accuracy[i], vp.k[i])?;
    }
    Ok(w)
}

/// Map from coalition to worth `w(S)` (and recorded accuracy), for one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CharacteristicTable {
    n: usize,
    values: BTreeMap<Coalition, f64>,
    accuracies: BTreeMap<Coalition, f64>,
}

impl CharacteristicTable {
    pub fn new(n: usize) -> Self {
        assert!(n <= MAX_PARTICIPANTS);
        let mut values = BTreeMap::new();
        values.insert(Coalition::empty(n), 0.0);
        Self {
            n,
            values,
            accuracies: BTreeMap::new(),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn insert(&mut self, coalition: Coalition, accuracy: f64, worth: f64) {
        assert_eq!(coalition.n(), self.n);
        if !coalition.is_empty() {
            self.accuracies.insert(coalition, accuracy);
            self.values.insert(coalition, worth);
        }
    }

    /// Worth of a coalition; querying a never-evaluated coalition is an error.
    pub fn worth(&self, coalition: Coalition) -> Result<f64> {
        self.values
            .get(&coalition)
            .copied()
            .ok_or_else(|| Error::MissingCoalition(coalition.to_string()))
    }

    pub fn accuracy(&self, coalition: Coalition) -> Option<f64> {
        self.accuracies.get(&coalition).copied()
    }

    /// Nonempty coalitions present, ascending by bitmask.
    pub fn coalitions(&self) -> impl Iterator<Item = Coalition> + '_ {
        self.values.keys().copied().filter(|c| !c.is_empty())
    }

    /// Number of nonempty coalitions present.
    pub fn len(&self) -> usize {
        self.values.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Whether all `2^n - 1` nonempty coalitions are present.
    pub fn is_complete(&self) -> bool {
        self.n <= 20 && self.len() == (1usize << self.n) - 1
    }

    /// Worth of the grand coalition.
    pub fn grand_worth(&self) -> Result<f64> {
        self.worth(Coalition::full(self.n))
    }

    /// Export as CSV rows `(coalition_bitmask, size, accuracy, w)`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "coalition_bitmask,size,accuracy,w")?;
        for (coalition, worth) in &self.values {
            if coalition.is_empty() {
                continue;
            }
            let acc = self
                .accuracies
                .get(coalition)
                .map_or(String::new(), |a| a.to_string());
            writeln!(out, "{},{},{},{}", coalition.bits(), coalition.size(), acc, worth)?;
        }
        Ok(())
    }
}

/// VCG surplus vector: each participant's marginal contribution
/// `w(N) - w(N \ {i})`. Components may be negative.
pub fn vcg_surplus(table: &CharacteristicTable) -> Result<Vec<f64>> {
    let n = table.n();
    let grand = Coalition::full(n);
    let w_n = table.worth(grand)?;
    (0..n)
        .map(|i| Ok(w_n - table.worth(grand.without(i))?))
        .collect()
}

/// VCG-like payment for participant `i`: the externality it imposes on the
/// others, measured by their valuations with and without `i`'s input.
pub fn vcg_payment(i: usize, global_valuations: &[f64], drop_i_valuations: &[f64]) -> f64 {
    debug_assert_eq!(global_valuations.len(), drop_i_valuations.len());
    global_valuations
        .iter()
        .zip(drop_i_valuations)
        .enumerate()
        .filter(|(j, _)| *j != i)
        .map(|(_, (g, d))| g - d)
        .sum()
}

/// Smallest relaxation (up to the bound's slack) that provably places the
/// VCG surplus vector inside the strong epsilon-core:
/// `max over nonempty S of alpha(S) * (n - |S|)`, clamped at zero, where
/// `alpha(S) = max over T >= S, i in S of [(w(N) - w(N\i)) - (w(T) - w(T\i))]`.
///
/// Exponential in `n`; guarded at `n <= 12`.
pub fn epsilon_lower_bound(table: &CharacteristicTable) -> Result<f64> {
    let n = table.n();
    if n > 12 {
        return Err(Error::capability(format!(
            "epsilon_lower_bound enumerates all coalition pairs; n = {n} exceeds 12"
        )));
    }
    let grand = Coalition::full(n);
    let w_n = table.worth(grand)?;
    let marginal_in_n: Vec<f64> = (0..n)
        .map(|i| Ok(w_n - table.worth(grand.without(i))?))
        .collect::<Result<_>>()?;

    let mut bound = 0.0f64;
    for s in Coalition::all_nonempty(n) {
        let mut alpha = f64::NEG_INFINITY;
        for t in s.supersets() {
            let w_t = table.worth(t)?;
            for i in s.members() {
                let term = marginal_in_n[i] - (w_t - table.worth(t.without(i))?);
                alpha = alpha.max(term);
            }
        }
        bound = bound.max(alpha * (n - s.size()) as f64);
    }
    Ok(bound.max(0.0))
}

/// Closed-form accuracy model used to exercise the mechanism without
/// training: `a(S, f) = a_max - c1 / (1 + |S_eff|) - c2 * sum_{i in S} f_i`,
/// clamped to `[0, 1]`, where `S_eff` is the set of members whose input
/// retains any signal (`f_i < 1`).
///
/// Accuracy grows with coalition size under truthful input and strictly
/// falls as any member's deviation degree rises.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccuracyModel {
    pub a_max: f64,
    pub c1: f64,
    pub c2: f64,
}

impl Default for AccuracyModel {
    fn default() -> Self {
        Self {
            a_max: 0.95,
            c1: 0.35,
            c2: 0.08,
        }
    }
}

/// Deterministic per-coalition accuracy function for a fixed deviation profile.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalyticOracle {
    model: AccuracyModel,
    degrees: Vec<f64>,
}

/// Build the analytic accuracy oracle for a deviation-degree profile.
pub fn analytic_oracle(degrees: Vec<f64>, model: AccuracyModel) -> Result<AnalyticOracle> {
    if degrees.iter().any(|f| !(0.0..=1.0).contains(f) || f.is_nan()) {
        return Err(Error::parameter("deviation degrees must lie in [0, 1]"));
    }
    Ok(AnalyticOracle { model, degrees })
}

impl AnalyticOracle {
    pub fn n(&self) -> usize {
        self.degrees.len()
    }

    pub fn degrees(&self) -> &[f64] {
        &self.degrees
    }

    /// Accuracy of the model aggregated over `coalition`.
    pub fn accuracy(&self, coalition: Coalition) -> f64 {
        let effective = coalition
            .members()
            .filter(|&i| self.degrees[i] < 1.0)
            .count();
        let poison: f64 = coalition.members().map(|i| self.degrees[i]).sum();
        (self.model.a_max - self.model.c1 / (1.0 + effective as f64) - self.model.c2 * poison)
            .clamp(0.0, 1.0)
    }

    /// Accuracy of participant `i`'s solo model.
    pub fn solo_accuracy(&self, i: usize) -> f64 {
        self.accuracy(Coalition::singleton(i, self.n()))
    }

    /// Solo accuracy with a truthful input, the participant-side baseline.
    pub fn truthful_solo_accuracy(&self, i: usize) -> f64 {
        let truthful = AnalyticOracle {
            model: self.model,
            degrees: {
                let mut d = self.degrees.clone();
                d[i] = 0.0;
                d
            },
        };
        truthful.solo_accuracy(i)
    }

    /// Build the complete characteristic table for this profile.
    pub fn full_table(&self, vp_k: &[f64], b0: f64) -> Result<CharacteristicTable> {
        let n = self.n();
        if n > 20 {
            return Err(Error::capability("full oracle table requires n <= 20"));
        }
        let solo: Vec<f64> = (0..n).map(|i| self.solo_accuracy(i)).collect();
        let vp = ValuationParams::new(vp_k.to_vec(), b0, solo)?;
        let mut table = CharacteristicTable::new(n);
        for s in Coalition::all_nonempty(n) {
            let acc = self.accuracy(s);
            table.insert(s, acc, characteristic_value(s, acc, &vp)?);
        }
        Ok(table)
    }
}
