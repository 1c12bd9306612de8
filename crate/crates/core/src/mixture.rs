//! Finite Beta mixtures: the universal state of filtering, prediction and
//! smoothing. Each component is the Beta(i + delta'/2, j + delta/2) law
//! indexed by a lattice point (i, j); weights are kept sparse in a sorted map
//! so accumulation order is deterministic.

use std::collections::BTreeMap;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::kernel::{log_beta_ratio, ModelParams};
use crate::scalar::{ln_beta, KahanSum, Real};

/// Nonnegative integer pair indexing the Beta component nu_{i,j}.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LatticeIndex {
    pub i: usize,
    pub j: usize,
}

impl LatticeIndex {
    pub const ORIGIN: LatticeIndex = LatticeIndex { i: 0, j: 0 };

    pub fn new(i: usize, j: usize) -> Self {
        Self { i, j }
    }

    /// Total depth i + j; bounds the rate-ladder prefix a component touches.
    pub fn depth(&self) -> usize {
        self.i + self.j
    }

    pub fn shifted(&self, di: usize, dj: usize) -> Self {
        Self::new(self.i + di, self.j + dj)
    }
}

/// Weighted finite set of Beta components over one parameter set.
#[derive(Clone, Debug, PartialEq)]
pub struct BetaMixture<T> {
    params: ModelParams<T>,
    components: BTreeMap<LatticeIndex, T>,
}

impl<T: Real> BetaMixture<T> {
    /// The stationary law: the single component at the origin,
    /// Beta(delta'/2, delta/2).
    pub fn stationary(params: ModelParams<T>) -> Self {
        let mut components = BTreeMap::new();
        components.insert(LatticeIndex::ORIGIN, T::one());
        Self { params, components }
    }

    /// Build from raw (index, weight) pairs; weights must be nonnegative with
    /// positive total. Colliding indices accumulate.
    pub fn from_components(
        params: ModelParams<T>,
        entries: impl IntoIterator<Item = (LatticeIndex, T)>,
    ) -> Result<Self> {
        let mut components: BTreeMap<LatticeIndex, T> = BTreeMap::new();
        for (idx, w) in entries {
            if w < T::zero() || !w.is_finite() {
                return Err(Error::NumericalInstability(format!(
                    "component ({}, {}) has invalid weight {w}",
                    idx.i, idx.j
                )));
            }
            *components.entry(idx).or_insert_with(T::zero) += w;
        }
        let m = Self { params, components };
        m.normalize()
    }

    pub fn params(&self) -> &ModelParams<T> {
        &self.params
    }

    pub fn component_count(&self) -> usize {
        self.components.len()
    }

    /// Largest i + j over the support.
    pub fn depth(&self) -> usize {
        self.components.keys().map(LatticeIndex::depth).max().unwrap_or(0)
    }

    pub fn weight(&self, idx: LatticeIndex) -> T {
        self.components.get(&idx).copied().unwrap_or_else(T::zero)
    }

    pub fn iter(&self) -> impl Iterator<Item = (LatticeIndex, T)> + '_ {
        self.components.iter().map(|(&k, &v)| (k, v))
    }

    pub fn total_weight(&self) -> T {
        let mut acc = KahanSum::default();
        for &w in self.components.values() {
            acc.add(w);
        }
        acc.value()
    }

    /// Rescale weights to sum to one. The component set is unchanged.
    pub fn normalize(mut self) -> Result<Self> {
        let total = self.total_weight();
        if !(total > T::zero()) {
            return Err(Error::DegenerateMixture);
        }
        for w in self.components.values_mut() {
            *w = *w / total;
        }
        Ok(self)
    }

    /// Drop components with weight below `epsilon` and renormalize. Returns
    /// the mixture and the total mass removed (before renormalization).
    pub fn prune(mut self, epsilon: T) -> Result<(Self, T)> {
        debug_assert!(epsilon >= T::zero() && epsilon < T::one());
        if epsilon == T::zero() {
            return Ok((self, T::zero()));
        }
        let mut removed = KahanSum::default();
        self.components.retain(|_, w| {
            if *w < epsilon {
                removed.add(*w);
                false
            } else {
                true
            }
        });
        if self.components.is_empty() {
            return Err(Error::DegenerateMixture);
        }
        Ok((self.normalize()?, removed.value()))
    }

    /// Mixture density at x in (0, 1).
    pub fn density_at(&self, x: T) -> Result<T> {
        if !(x > T::zero() && x < T::one()) {
            return Err(Error::Domain(x.to_f64().unwrap_or(f64::NAN)));
        }
        let lx = x.ln();
        let l1x = (T::one() - x).ln();
        let mut acc = KahanSum::default();
        for (idx, w) in self.iter() {
            let a = self.params.shape_a(idx);
            let b = self.params.shape_b(idx);
            let ln_dens = (a - T::one()) * lx + (b - T::one()) * l1x - ln_beta(a, b);
            acc.add(w * ln_dens.exp());
        }
        Ok(acc.value())
    }

    /// E[x^a (1-x)^b] under the mixture, via Beta-function ratios.
    pub fn moment(&self, a: usize, b: usize) -> T {
        let mut acc = KahanSum::default();
        for (idx, w) in self.iter() {
            let ratio = log_beta_ratio(idx, idx.shifted(a, b), &self.params).exp();
            acc.add(w * ratio);
        }
        acc.value()
    }

    pub fn mean(&self) -> T {
        self.moment(1, 0)
    }

    pub fn variance(&self) -> T {
        let m = self.mean();
        self.moment(2, 0) - m * m
    }

    /// Internal: mutate the raw weight at an index (used by the operators;
    /// caller is responsible for re-normalizing).
    pub(crate) fn accumulate(&mut self, idx: LatticeIndex, w: T) {
        *self.components.entry(idx).or_insert_with(T::zero) += w;
    }

    pub(crate) fn empty(params: ModelParams<T>) -> Self {
        Self {
            params,
            components: BTreeMap::new(),
        }
    }
}

// JSON wire format:
// {"delta": .., "delta_prime": .., "components": [{"i": .., "j": .., "w": ..}]}

#[derive(Serialize, Deserialize)]
struct ComponentJson<T> {
    i: usize,
    j: usize,
    w: T,
}

#[derive(Serialize, Deserialize)]
struct MixtureJson<T> {
    delta: T,
    delta_prime: T,
    components: Vec<ComponentJson<T>>,
}

impl<T: Real + Serialize> Serialize for BetaMixture<T> {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let json = MixtureJson {
            delta: self.params.delta(),
            delta_prime: self.params.delta_prime(),
            components: self
                .iter()
                .map(|(idx, w)| ComponentJson { i: idx.i, j: idx.j, w })
                .collect(),
        };
        json.serialize(serializer)
    }
}

impl<'de, T: Real + Deserialize<'de>> Deserialize<'de> for BetaMixture<T> {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let json = MixtureJson::<T>::deserialize(deserializer)?;
        let params =
            ModelParams::new(json.delta, json.delta_prime).map_err(D::Error::custom)?;
        let mut components = BTreeMap::new();
        for c in json.components {
            components.insert(LatticeIndex::new(c.i, c.j), c.w);
        }
        if components.is_empty() {
            return Err(D::Error::custom("mixture without components"));
        }
        Ok(Self { params, components })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(d: f64, dp: f64) -> ModelParams<f64> {
        ModelParams::new(d, dp).unwrap()
    }

    #[test]
    fn stationary_is_single_origin_component() {
        for &(d, dp) in &[(2.0, 2.0), (5.0, 3.5)] {
            let m = BetaMixture::stationary(params(d, dp));
            assert_eq!(m.component_count(), 1);
            assert_eq!(m.weight(LatticeIndex::ORIGIN), 1.0);
            let expect = dp / (d + dp);
            assert!((m.mean() - expect).abs() < 1e-14);
        }
    }

    #[test]
    fn stationary_mean_matches_quadrature() {
        // Numeric integral of x * pi(x) against the Beta-mean identity.
        let m = BetaMixture::stationary(params(3.0, 5.0));
        let n = 20_000;
        let h = 1.0 / n as f64;
        let mut acc = 0.0;
        for r in 0..n {
            let x = (r as f64 + 0.5) * h;
            acc += x * m.density_at(x).unwrap() * h;
        }
        assert!((acc - m.mean()).abs() < 1e-6);
    }

    #[test]
    fn normalize_rescales() {
        let p = params(2.0, 2.0);
        let m = BetaMixture::from_components(p, [(LatticeIndex::ORIGIN, 2.0)]).unwrap();
        assert_eq!(m.weight(LatticeIndex::ORIGIN), 1.0);

        let m = BetaMixture::from_components(
            p,
            [(LatticeIndex::new(1, 0), 1.0), (LatticeIndex::ORIGIN, 3.0)],
        )
        .unwrap();
        assert!((m.weight(LatticeIndex::new(1, 0)) - 0.25).abs() < 1e-15);
        assert!((m.weight(LatticeIndex::ORIGIN) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn normalize_rejects_zero_mass() {
        let p = params(2.0, 2.0);
        assert!(matches!(
            BetaMixture::from_components(p, [(LatticeIndex::ORIGIN, 0.0)]),
            Err(Error::DegenerateMixture)
        ));
    }

    #[test]
    fn prune_examples() {
        let p = params(2.0, 2.0);
        let m = BetaMixture::from_components(
            p,
            [
                (LatticeIndex::ORIGIN, 1.0 - 1e-15),
                (LatticeIndex::new(5, 3), 1e-15),
            ],
        )
        .unwrap();
        let (kept, removed) = m.clone().prune(0.0).unwrap();
        assert_eq!(kept, m);
        assert_eq!(removed, 0.0);
        let (kept, removed) = m.prune(1e-12).unwrap();
        assert_eq!(kept.component_count(), 1);
        assert_eq!(kept.weight(LatticeIndex::ORIGIN), 1.0);
        assert!(removed > 0.0 && removed < 1e-12);
    }

    #[test]
    fn prune_cannot_empty() {
        let p = params(2.0, 2.0);
        let m = BetaMixture::stationary(p);
        assert!(m.prune(0.999999).is_ok());
    }

    #[test]
    fn density_examples() {
        let p = params(2.0, 2.0);
        let m = BetaMixture::stationary(p);
        for &x in &[0.1, 0.5, 0.93] {
            assert!((m.density_at(x).unwrap() - 1.0).abs() < 1e-14);
        }
        // Beta(2, 1) has density 2x
        let m = BetaMixture::from_components(p, [(LatticeIndex::new(1, 0), 1.0)]).unwrap();
        assert!((m.density_at(0.5).unwrap() - 1.0).abs() < 1e-14);
        assert!(m.density_at(1.5).is_err());
        assert!(m.density_at(0.0).is_err());
    }

    #[test]
    fn density_integrates_to_one() {
        let p = params(2.5, 4.0);
        let m = BetaMixture::from_components(
            p,
            [
                (LatticeIndex::new(0, 0), 0.2),
                (LatticeIndex::new(3, 1), 0.5),
                (LatticeIndex::new(1, 4), 0.3),
            ],
        )
        .unwrap();
        // Simpson on a fine grid; integrand is smooth and vanishes mildly at
        // the edges for these shapes.
        let n = 200_000;
        let h = 1.0 / n as f64;
        let mut acc = 0.0;
        for r in 0..n {
            let x = (r as f64 + 0.5) * h;
            acc += m.density_at(x).unwrap() * h;
        }
        assert!((acc - 1.0).abs() < 1e-8, "{acc}");
    }

    #[test]
    fn moment_examples() {
        let p = params(3.0, 5.0);
        let m = BetaMixture::stationary(p);
        assert!((m.moment(0, 0) - 1.0).abs() < 1e-14);
        assert!((m.moment(1, 0) - 5.0 / 8.0).abs() < 1e-14);
    }

    #[test]
    fn moment_matches_monte_carlo() {
        use rand::SeedableRng;
        use rand_distr::{Beta, Distribution};
        let p = params(2.5, 3.5);
        let m = BetaMixture::from_components(
            p,
            [(LatticeIndex::new(2, 1), 0.6), (LatticeIndex::new(0, 3), 0.4)],
        )
        .unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        let n = 1_000_000usize;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        let comps: Vec<(LatticeIndex, f64)> = m.iter().collect();
        for k in 0..n {
            // stratified component choice keeps the oracle deterministic
            let u = (k as f64 + 0.5) / n as f64;
            let idx = if u < comps[0].1 { comps[0].0 } else { comps[1].0 };
            let beta = Beta::new(p.shape_a(idx), p.shape_b(idx)).unwrap();
            let x: f64 = beta.sample(&mut rng);
            let v = x * x * (1.0 - x);
            sum += v;
            sum_sq += v * v;
        }
        let mc = sum / n as f64;
        let se = ((sum_sq / n as f64 - mc * mc) / n as f64).sqrt();
        let exact = m.moment(2, 1);
        assert!((mc - exact).abs() < 4.0 * se, "{mc} vs {exact} (se {se})");
    }

    #[test]
    fn json_round_trip() {
        let p = params(2.0, 6.5);
        let m = BetaMixture::from_components(
            p,
            [(LatticeIndex::new(2, 1), 0.125), (LatticeIndex::ORIGIN, 0.875)],
        )
        .unwrap();
        let text = serde_json::to_string(&m).unwrap();
        assert!(text.contains("\"delta\":2.0") || text.contains("\"delta\":2"));
        let back: BetaMixture<f64> = serde_json::from_str(&text).unwrap();
        assert_eq!(back, m);
    }
}
