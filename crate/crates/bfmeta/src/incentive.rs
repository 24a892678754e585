//! Reputation bookkeeping and reputation-weighted client selection.
//!
//! Each aggregation round rewards a participating client through two
//! normalized factors — model quality (its measured accuracy against the
//! round's min/max) and data quantity (its shard size against the
//! population's min/max) — folded into
//!
//! ```text
//! R = (1 - beta) * (1 - alpha/2) * (R_prev + r_basic
//!       + r_quantity * quality + r_quality * quantity_prev)
//! ```
//!
//! The constants pair crosswise with the factors on purpose; set
//! `swap_factor_pairing` to use the straight pairing instead. Selection
//! probabilities are reputations normalized over non-blacklisted clients,
//! sampled without replacement.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ledger::Address;
use crate::monitor::Blacklist;

/// Reward constants and bootstrap value.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ReputationConfig {
    pub r_basic: f64,
    pub r_quality: f64,
    pub r_quantity: f64,
    pub initial_reputation: f64,
    /// `false` keeps the crosswise constant/factor pairing; `true` pairs
    /// `r_quality` with the quality factor and `r_quantity` with the
    /// quantity factor.
    pub swap_factor_pairing: bool,
}

impl Default for ReputationConfig {
    fn default() -> Self {
        ReputationConfig {
            r_basic: 0.1,
            r_quality: 0.5,
            r_quantity: 0.5,
            initial_reputation: 1.0,
            swap_factor_pairing: false,
        }
    }
}

impl ReputationConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("reputation.r_basic", self.r_basic),
            ("reputation.r_quality", self.r_quality),
            ("reputation.r_quantity", self.r_quantity),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(format!("{name} must be finite and >= 0")));
            }
        }
        if !(self.initial_reputation.is_finite() && self.initial_reputation > 0.0) {
            return Err(Error::config(
                "reputation.initial_reputation must be positive so the first round selects uniformly",
            ));
        }
        Ok(())
    }
}

/// Current reputation per client.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct ReputationLedger {
    values: BTreeMap<Address, f64>,
}

impl ReputationLedger {
    pub fn new(addresses: impl IntoIterator<Item = Address>, initial: f64) -> Self {
        ReputationLedger {
            values: addresses.into_iter().map(|a| (a, initial)).collect(),
        }
    }

    pub fn get(&self, addr: &Address) -> f64 {
        self.values.get(addr).copied().unwrap_or(0.0)
    }

    pub fn set(&mut self, addr: Address, value: f64) {
        debug_assert!(value >= 0.0, "reputation must stay non-negative");
        self.values.insert(addr, value);
    }

    pub fn snapshot(&self) -> BTreeMap<Address, f64> {
        self.values.clone()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Address, &f64)> {
        self.values.iter()
    }
}

fn normalized_factor(value: f64, min: f64, max: f64, what: &str) -> Result<f64> {
    if !(min <= value && value <= max) {
        return Err(Error::invalid_input(format!(
            "{what} {value} outside [{min}, {max}]"
        )));
    }
    if max == min {
        // everyone sits at the shared optimum; reward uniformly rather
        // than dividing zero by zero
        return Ok(1.0);
    }
    Ok((value - min) / (max - min))
}

/// Model-quality factor: the client's accuracy normalized over the round's
/// accuracy range. Degenerate ranges yield 1 for all clients.
pub fn quality_factor(theta: f64, theta_min: f64, theta_max: f64) -> Result<f64> {
    normalized_factor(theta, theta_min, theta_max, "accuracy")
}

/// Data-quantity factor: the client's shard size normalized over the
/// population's size range. Degenerate ranges yield 1 for all clients.
pub fn quantity_factor(size: u64, size_min: u64, size_max: u64) -> Result<f64> {
    normalized_factor(size as f64, size_min as f64, size_max as f64, "data size")
}

/// One round's reputation update. `quality` is this round's factor,
/// `quantity_prev` the previous round's quantity factor (rounds with no
/// prior participation pass the current one).
pub fn update_reputation(
    r_prev: f64,
    alpha: bool,
    beta: bool,
    quality: f64,
    quantity_prev: f64,
    cfg: &ReputationConfig,
) -> f64 {
    debug_assert!(r_prev >= 0.0);
    debug_assert!((0.0..=1.0).contains(&quality));
    debug_assert!((0.0..=1.0).contains(&quantity_prev));
    let a = if alpha { 1.0 } else { 0.0 };
    let b = if beta { 1.0 } else { 0.0 };
    let reward = if cfg.swap_factor_pairing {
        cfg.r_quality * quality + cfg.r_quantity * quantity_prev
    } else {
        cfg.r_quantity * quality + cfg.r_quality * quantity_prev
    };
    (1.0 - b) * (1.0 - a / 2.0) * (r_prev + cfg.r_basic + reward)
}

/// Reputations normalized into selection probabilities. Blacklisted
/// clients get exactly zero and do not contribute to the normalizer.
pub fn selection_probabilities(
    ledger: &ReputationLedger,
    blacklist: &Blacklist,
) -> Result<BTreeMap<Address, f64>> {
    let mut total = 0.0;
    for (addr, &r) in ledger.iter() {
        if !blacklist.contains(addr) {
            total += r;
        }
    }
    if total <= 0.0 {
        return Err(Error::NoEligibleClients(
            "all clients blacklisted or at zero reputation".into(),
        ));
    }
    Ok(ledger
        .iter()
        .map(|(addr, &r)| {
            let p = if blacklist.contains(addr) { 0.0 } else { r / total };
            (addr.clone(), p)
        })
        .collect())
}

/// Weighted sampling without replacement: `count` sequential draws over the
/// remaining probability mass. Deterministic for a given RNG state; zero-
/// probability clients can never be drawn.
pub fn select_clients(
    probs: &BTreeMap<Address, f64>,
    count: usize,
    rng: &mut impl Rng,
) -> Result<Vec<Address>> {
    let mut pool: Vec<(&Address, f64)> = probs
        .iter()
        .filter(|(_, &p)| p > 0.0)
        .map(|(a, &p)| (a, p))
        .collect();
    if count > pool.len() {
        return Err(Error::InsufficientClients {
            requested: count,
            eligible: pool.len(),
        });
    }
    let mut selected = Vec::with_capacity(count);
    for _ in 0..count {
        let total: f64 = pool.iter().map(|(_, p)| p).sum();
        let mut x = rng.gen_range(0.0..total);
        let mut chosen = pool.len() - 1;
        for (i, (_, p)) in pool.iter().enumerate() {
            if x < *p {
                chosen = i;
                break;
            }
            x -= p;
        }
        let (addr, _) = pool.remove(chosen);
        selected.push(addr.clone());
    }
    Ok(selected)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn addr(i: usize) -> Address {
        Address::new(format!("client-{i:02}"))
    }

    #[test]
    fn factors_hit_the_endpoints() {
        assert_eq!(quality_factor(0.5, 0.5, 1.0).unwrap(), 0.0);
        assert_eq!(quality_factor(1.0, 0.5, 1.0).unwrap(), 1.0);
        assert_eq!(quality_factor(0.75, 0.5, 1.0).unwrap(), 0.5);
        assert_eq!(quantity_factor(100, 100, 500).unwrap(), 0.0);
        assert_eq!(quantity_factor(500, 100, 500).unwrap(), 1.0);
        assert_eq!(quantity_factor(300, 100, 500).unwrap(), 0.5);
    }

    #[test]
    fn degenerate_range_rewards_uniformly() {
        assert_eq!(quality_factor(0.8, 0.8, 0.8).unwrap(), 1.0);
        assert_eq!(quantity_factor(200, 200, 200).unwrap(), 1.0);
    }

    #[test]
    fn out_of_range_inputs_error() {
        assert!(quality_factor(0.4, 0.5, 1.0).is_err());
        assert!(quality_factor(1.1, 0.5, 1.0).is_err());
        assert!(quantity_factor(50, 100, 500).is_err());
    }

    #[test]
    fn beta_zeroes_the_update() {
        let cfg = ReputationConfig::default();
        assert_eq!(update_reputation(5.0, false, true, 1.0, 1.0, &cfg), 0.0);
        assert_eq!(update_reputation(0.0, true, true, 0.3, 0.7, &cfg), 0.0);
    }

    #[test]
    fn alpha_halves_the_update() {
        let cfg = ReputationConfig::default();
        let clean = update_reputation(2.0, false, false, 0.6, 0.4, &cfg);
        let halved = update_reputation(2.0, true, false, 0.6, 0.4, &cfg);
        assert!((halved - clean / 2.0).abs() < 1e-15);
    }

    #[test]
    fn update_matches_worked_example() {
        let cfg = ReputationConfig {
            r_basic: 0.1,
            r_quantity: 0.5,
            r_quality: 0.5,
            initial_reputation: 1.0,
            swap_factor_pairing: false,
        };
        let r = update_reputation(1.0, false, false, 1.0, 0.0, &cfg);
        assert!((r - 1.6).abs() < 1e-12);
    }

    #[test]
    fn swap_pairing_exchanges_the_constants() {
        let cfg = ReputationConfig {
            r_basic: 0.0,
            r_quality: 0.7,
            r_quantity: 0.2,
            initial_reputation: 1.0,
            swap_factor_pairing: false,
        };
        let literal = update_reputation(0.0, false, false, 1.0, 0.0, &cfg);
        assert!((literal - 0.2).abs() < 1e-15); // r_quantity * quality
        let swapped_cfg = ReputationConfig {
            swap_factor_pairing: true,
            ..cfg
        };
        let swapped = update_reputation(0.0, false, false, 1.0, 0.0, &swapped_cfg);
        assert!((swapped - 0.7).abs() < 1e-15); // r_quality * quality
    }

    #[test]
    fn monotone_in_prev_and_factors() {
        let cfg = ReputationConfig::default();
        let base = update_reputation(1.0, false, false, 0.5, 0.5, &cfg);
        assert!(update_reputation(1.1, false, false, 0.5, 0.5, &cfg) > base);
        assert!(update_reputation(1.0, false, false, 0.6, 0.5, &cfg) > base);
        assert!(update_reputation(1.0, false, false, 0.5, 0.6, &cfg) > base);
    }

    fn ledger_with(values: &[f64]) -> ReputationLedger {
        let mut ledger = ReputationLedger::default();
        for (i, &v) in values.iter().enumerate() {
            ledger.set(addr(i), v);
        }
        ledger
    }

    #[test]
    fn equal_reputations_select_uniformly() {
        let ledger = ledger_with(&[2.0; 5]);
        let probs = selection_probabilities(&ledger, &Blacklist::new()).unwrap();
        for p in probs.values() {
            assert!((p - 0.2).abs() < 1e-12);
        }
        let sum: f64 = probs.values().sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn blacklisted_get_zero_and_the_rest_renormalize() {
        let ledger = ledger_with(&[1.0; 4]);
        let mut bl = Blacklist::new();
        bl.add(addr(2), 3);
        let probs = selection_probabilities(&ledger, &bl).unwrap();
        assert_eq!(probs[&addr(2)], 0.0);
        for i in [0, 1, 3] {
            assert!((probs[&addr(i)] - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn probabilities_follow_reputation_ratios() {
        let ledger = ledger_with(&[3.0, 1.0]);
        let probs = selection_probabilities(&ledger, &Blacklist::new()).unwrap();
        assert!((probs[&addr(0)] - 0.75).abs() < 1e-12);
        assert!((probs[&addr(1)] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn no_eligible_clients_is_an_error() {
        let ledger = ledger_with(&[0.0, 1.0]);
        let mut bl = Blacklist::new();
        bl.add(addr(1), 1);
        assert!(matches!(
            selection_probabilities(&ledger, &bl),
            Err(Error::NoEligibleClients(_))
        ));
    }

    #[test]
    fn scale_invariance_of_probabilities() {
        let base = ledger_with(&[0.4, 1.3, 2.2, 0.9]);
        let scaled = ledger_with(&[0.4 * 7.5, 1.3 * 7.5, 2.2 * 7.5, 0.9 * 7.5]);
        let bl = Blacklist::new();
        let p = selection_probabilities(&base, &bl).unwrap();
        let q = selection_probabilities(&scaled, &bl).unwrap();
        for (a, b) in p.values().zip(q.values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn selecting_the_whole_pool_returns_it() {
        let ledger = ledger_with(&[1.0, 2.0, 3.0]);
        let probs = selection_probabilities(&ledger, &Blacklist::new()).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let mut picked = select_clients(&probs, 3, &mut rng).unwrap();
        picked.sort();
        assert_eq!(picked, vec![addr(0), addr(1), addr(2)]);
    }

    #[test]
    fn zero_probability_is_never_selected() {
        let mut probs = BTreeMap::new();
        probs.insert(addr(0), 0.5);
        probs.insert(addr(1), 0.0);
        probs.insert(addr(2), 0.5);
        for seed in 0..10_000u64 {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let picked = select_clients(&probs, 2, &mut rng).unwrap();
            assert!(!picked.contains(&addr(1)), "seed {seed} picked a zero-weight client");
        }
    }

    #[test]
    fn nine_to_one_reputation_wins_ninety_percent_of_draws() {
        let ledger = ledger_with(&[9.0, 1.0]);
        let probs = selection_probabilities(&ledger, &Blacklist::new()).unwrap();
        let mut hits = 0u32;
        for seed in 0..10_000u64 {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            if select_clients(&probs, 1, &mut rng).unwrap()[0] == addr(0) {
                hits += 1;
            }
        }
        let rate = hits as f64 / 10_000.0;
        assert!((rate - 0.9).abs() <= 0.02, "observed {rate}");
    }

    #[test]
    fn over_requesting_errors() {
        let ledger = ledger_with(&[1.0, 1.0]);
        let probs = selection_probabilities(&ledger, &Blacklist::new()).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        assert!(matches!(
            select_clients(&probs, 3, &mut rng),
            Err(Error::InsufficientClients {
                requested: 3,
                eligible: 2
            })
        ));
    }

    #[test]
    fn selection_is_deterministic_per_seed() {
        let ledger = ledger_with(&[0.5, 1.5, 2.5, 3.5, 4.5]);
        let probs = selection_probabilities(&ledger, &Blacklist::new()).unwrap();
        let a = select_clients(&probs, 3, &mut ChaCha20Rng::seed_from_u64(11)).unwrap();
        let b = select_clients(&probs, 3, &mut ChaCha20Rng::seed_from_u64(11)).unwrap();
        assert_eq!(a, b);
    }
}
