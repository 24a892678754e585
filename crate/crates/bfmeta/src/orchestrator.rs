//! The end-to-end round loop: selection, local training or attack
//! production, mining, screening, aggregation, the global-model record,
//! chain broadcast, and reputation updates — all driven off one master
//! seed through labelled RNG streams so a run is a pure function of its
//! configuration.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::adversary::{produce_submission, BehaviorProfile, ClientState};
use crate::config::{DataKind, ExperimentConfig, Mode};
use crate::crypto::{derive_seed, derive_seed_u64, SigningKey};
use crate::error::{Error, Result};
use crate::fl::{
    aggregate, build_synthetic, evaluate, init_model, load_csv, partition_dataset,
    AggregationInput, Dataset, MlpArchitecture, ModelParameters, SyntheticDataConfig,
    TrainConfig,
};
use crate::incentive::{
    quality_factor, quantity_factor, selection_probabilities, select_clients,
    update_reputation, ReputationLedger,
};
use crate::ledger::{
    genesis_block, hash_model, mine_block, Address, AuthorizationList, Block, ModelRecord,
};
use crate::monitor::{
    blacklists, gate_submission, screen, Blacklist, Reason, ScreenContext, ScreeningResult,
    Submission,
};
use crate::netsim::{tick_to_ms, EventKind, EventQueue, LatencyReport, RoundLatency};
use crate::report::{EmittedPaths, ExperimentReport, RoundReport};

/// Live experiment state; one instance per run.
pub struct ExperimentState {
    pub cfg: ExperimentConfig,
    arch: MlpArchitecture,
    clients: Vec<ClientState>,
    index_of: BTreeMap<Address, usize>,
    pub auth: AuthorizationList,
    server_address: Address,
    server_key: SigningKey,
    server_sequence: u64,
    miners: Vec<Address>,
    pub chain: Vec<Block>,
    pub global_model: ModelParameters,
    reputation: ReputationLedger,
    pub blacklist: Blacklist,
    queue: EventQueue,
    pub round: u64,
    test_set: Dataset,
    quantity_prev: BTreeMap<Address, f64>,
    size_bounds: (u64, u64),
    pub latency: LatencyReport,
    initial_reputation: BTreeMap<Address, f64>,
    initial_probs: BTreeMap<Address, f64>,
}

fn client_address(i: usize) -> Address {
    Address::new(format!("client-{i:03}"))
}

impl ExperimentState {
    pub fn init(cfg: ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let seed = cfg.experiment.seed;
        let k = cfg.experiment.clients;

        let behaviors = cfg.behavior_assignments()?;

        let mut rng_sizes = ChaCha20Rng::seed_from_u64(derive_seed_u64(seed, "shard-sizes"));
        let sizes: Vec<usize> = (0..k)
            .map(|_| {
                rng_sizes.gen_range(cfg.data.client_samples_min..=cfg.data.client_samples_max)
            })
            .collect();

        let data_seed = derive_seed_u64(seed, "data");
        let (shards, test_set, dims, classes) = match cfg.data.kind {
            DataKind::Synthetic => {
                let syn = SyntheticDataConfig {
                    classes: cfg.data.classes,
                    dims: cfg.data.dims,
                    center_spread: cfg.data.center_spread,
                    noise_sigma: cfg.data.noise_sigma,
                    label_skew: cfg.data.label_skew,
                };
                let (shards, test) =
                    build_synthetic(&syn, &sizes, cfg.data.test_fraction, data_seed)?;
                (shards, test, cfg.data.dims, cfg.data.classes)
            }
            DataKind::Csv => {
                let path = cfg.data.csv_path.as_ref().expect("validated");
                let pool = load_csv(path)?;
                let (dims, classes) = (pool.width(), pool.n_classes());
                let (shards, test) =
                    partition_dataset(&pool, &sizes, cfg.data.test_fraction, data_seed)?;
                (shards, test, dims, classes)
            }
        };

        let mut layer_sizes = vec![dims as u32];
        layer_sizes.extend_from_slice(&cfg.model.hidden_layers);
        layer_sizes.push(classes as u32);
        let arch = MlpArchitecture::new(layer_sizes, cfg.model.activation)?;

        let mut clients = Vec::with_capacity(k);
        let mut index_of = BTreeMap::new();
        let mut auth_entries = Vec::with_capacity(k + 1);
        for (i, (shard, behavior)) in shards.into_iter().zip(behaviors).enumerate() {
            let address = client_address(i);
            let key = SigningKey::from_seed(derive_seed(seed, &format!("key:{address}")));
            auth_entries.push((address.clone(), key.verify_key()));
            index_of.insert(address.clone(), i);
            clients.push(ClientState::new(address, key, shard, behavior));
        }
        let server_address = Address::new("server");
        let server_key = SigningKey::from_seed(derive_seed(seed, "key:server"));
        auth_entries.push((server_address.clone(), server_key.verify_key()));
        let auth = AuthorizationList::new(auth_entries)?;

        let miners: Vec<Address> = (0..cfg.ledger.miners)
            .map(|j| Address::new(format!("miner-{j}")))
            .collect();

        let global_model = init_model(&arch, derive_seed_u64(seed, "model-init"));
        let reputation = ReputationLedger::new(
            clients.iter().map(|c| c.address.clone()),
            cfg.reputation.initial_reputation,
        );
        let blacklist = Blacklist::new();
        let initial_reputation = reputation.snapshot();
        let initial_probs = selection_probabilities(&reputation, &blacklist)?;

        let size_bounds = (
            clients.iter().map(ClientState::data_size).min().expect("k >= 1"),
            clients.iter().map(ClientState::data_size).max().expect("k >= 1"),
        );

        let chain = vec![genesis_block(
            cfg.ledger.difficulty,
            miners[0].clone(),
            0,
        )?];

        Ok(ExperimentState {
            cfg,
            arch,
            clients,
            index_of,
            auth,
            server_address,
            server_key,
            server_sequence: 0,
            miners,
            chain,
            global_model,
            reputation,
            blacklist,
            queue: EventQueue::new(),
            round: 0,
            test_set,
            quantity_prev: BTreeMap::new(),
            size_bounds,
            latency: LatencyReport::default(),
            initial_reputation,
            initial_probs,
        })
    }

    pub fn arch(&self) -> &MlpArchitecture {
        &self.arch
    }

    pub fn reputation_snapshot(&self) -> BTreeMap<Address, f64> {
        self.reputation.snapshot()
    }

    pub fn behaviors_by_address(&self) -> BTreeMap<Address, String> {
        self.clients
            .iter()
            .map(|c| (c.address.clone(), c.behavior.name().to_string()))
            .collect()
    }

    fn seed(&self) -> u64 {
        self.cfg.experiment.seed
    }

    fn miner_for_round(&self, round: u64) -> Address {
        self.miners[((round - 1) as usize) % self.miners.len()].clone()
    }

    /// Executes one full round and reports it. State afterwards is a pure
    /// function of state before.
    pub fn run_round(&mut self) -> Result<RoundReport> {
        self.round += 1;
        let round = self.round;
        let is_bfmeta = self.cfg.experiment.mode == Mode::Bfmeta;
        let t0 = self.queue.now();

        // selection: reputation-weighted for the protected pipeline,
        // uniform for the baseline
        let probs = if is_bfmeta {
            selection_probabilities(&self.reputation, &self.blacklist)?
        } else {
            let p = 1.0 / self.clients.len() as f64;
            self.clients
                .iter()
                .map(|c| (c.address.clone(), p))
                .collect()
        };
        let eligible = probs.values().filter(|p| **p > 0.0).count();
        let want = (self.clients.len() as f64 * self.cfg.experiment.selection_rate).ceil()
            as usize;
        let count = want.min(eligible);
        let mut rng_select =
            ChaCha20Rng::seed_from_u64(derive_seed_u64(self.seed(), &format!("select:{round}")));
        let mut selected = select_clients(&probs, count, &mut rng_select)?;
        selected.sort();

        // local training / attack production, arrivals scheduled on the
        // event clock
        let mut rng_lat =
            ChaCha20Rng::seed_from_u64(derive_seed_u64(self.seed(), &format!("latency:{round}")));
        let mut round_lat = RoundLatency::default();
        let mut subs: Vec<Submission> = Vec::with_capacity(selected.len());
        for addr in &selected {
            let idx = self.index_of[addr];
            let trains = self.clients[idx].will_train(round);
            let t_fl = if trains {
                self.cfg.latency.t_fl.sample(&mut rng_lat)
            } else {
                0
            };
            let t_cs = self.cfg.latency.t_c_to_s.sample(&mut rng_lat);
            round_lat.t_fl = round_lat.t_fl.max(t_fl);
            round_lat.t_c_to_s = round_lat.t_c_to_s.max(t_cs);

            let signed_at = t0 + t_fl;
            let train_cfg = TrainConfig {
                learning_rate: self.cfg.training.learning_rate,
                epochs: self.cfg.training.epochs,
                batch_size: self.cfg.training.batch_size,
                rng_seed: derive_seed_u64(self.seed(), &format!("train:{addr}:{round}")),
            };
            let mut rng_adv = ChaCha20Rng::seed_from_u64(derive_seed_u64(
                self.seed(),
                &format!("adv:{addr}:{round}"),
            ));
            let mut sub = produce_submission(
                &mut self.clients[idx],
                &self.global_model,
                round,
                signed_at,
                &train_cfg,
                &mut rng_adv,
            )?;
            let arrival = signed_at + t_cs;
            sub.arrival_timestamp = arrival;
            self.queue.schedule_at(
                arrival,
                EventKind::Submit {
                    client: sub.client_address.clone(),
                },
            )?;
            subs.push(sub);
        }
        self.queue.run_until_idle(|_, _| Ok(()))?;

        // gate, mine, screen
        let pre_len = self.chain.len();
        let mut blocks_appended: Vec<String> = Vec::new();
        let results: Vec<ScreeningResult> = if is_bfmeta {
            let mut admitted: Vec<(usize, ModelRecord)> = Vec::new();
            for (i, sub) in subs.iter().enumerate() {
                let gate = gate_submission(
                    sub,
                    &self.chain[..pre_len],
                    &self.auth,
                    &self.blacklist,
                )?;
                if gate.is_none() {
                    admitted.push((i, sub.record.clone()));
                }
            }

            let t_bg = self.cfg.latency.t_bg.sample(&mut rng_lat);
            let t_bv = self.cfg.latency.t_bv.sample(&mut rng_lat);
            if !admitted.is_empty() {
                round_lat.t_bg = t_bg;
                self.queue.schedule_after(t_bg, EventKind::Mine)?;
                self.queue.run_until_idle(|_, _| Ok(()))?;
                let block = mine_block(
                    admitted.iter().map(|(_, r)| r.clone()).collect(),
                    self.chain.last().expect("genesis exists"),
                    self.cfg.ledger.difficulty,
                    self.miner_for_round(round),
                    self.queue.now(),
                )?;
                blocks_appended.push(block.hash().to_hex());
                self.chain.push(block);
                for (i, record) in &admitted {
                    let idx = self.index_of[&subs[*i].client_address];
                    self.clients[idx].last_mined =
                        Some((subs[*i].params.clone(), record.clone()));
                }
            }

            round_lat.t_bv = t_bv;
            self.queue.schedule_after(t_bv, EventKind::Verify)?;
            self.queue.run_until_idle(|_, _| Ok(()))?;
            let results = screen(
                &subs,
                &ScreenContext {
                    chain: &self.chain,
                    pre_mining_len: pre_len,
                    auth: &self.auth,
                    test_set: &self.test_set,
                    blacklist: &self.blacklist,
                    slack: self.cfg.monitor.accuracy_slack,
                },
            )?;
            for r in &results {
                if blacklists(r.reason) {
                    self.blacklist.add(r.client_address.clone(), round);
                }
            }
            results
        } else {
            // plain baseline: no screening, every submission flows through
            let mut results = Vec::with_capacity(subs.len());
            for sub in &subs {
                results.push(ScreeningResult {
                    client_address: sub.client_address.clone(),
                    alpha: false,
                    beta: false,
                    measured_accuracy: evaluate(&sub.params, &self.test_set)?,
                    included: true,
                    reason: Reason::Ok,
                });
            }
            results
        };

        // aggregation over the indicator-carrying survivors
        let inputs: Vec<AggregationInput> = subs
            .iter()
            .zip(&results)
            .filter(|(_, r)| {
                matches!(
                    r.reason,
                    Reason::Ok | Reason::LazyDuplicate | Reason::HashMismatch
                )
            })
            .map(|(s, r)| AggregationInput {
                params: s.params.clone(),
                data_size: s.record.data_size,
                alpha: r.alpha,
                beta: r.beta,
            })
            .collect();
        self.queue.schedule_after(1, EventKind::Aggregate)?;
        self.queue.run_until_idle(|_, _| Ok(()))?;
        let mut aggregation_empty = false;
        match aggregate(&inputs) {
            Ok(model) => self.global_model = model,
            Err(Error::EmptyAggregation) => aggregation_empty = true,
            Err(e) => return Err(e),
        }
        let global_accuracy = evaluate(&self.global_model, &self.test_set)?;

        // the updated global model gets its own on-chain record
        if is_bfmeta && !aggregation_empty {
            self.server_sequence += 1;
            let data_total: u64 = inputs
                .iter()
                .filter(|s| s.included())
                .map(|s| s.data_size)
                .sum::<u64>()
                .max(1);
            let record = ModelRecord::signed(
                &self.server_key,
                self.server_address.clone(),
                round,
                hash_model(&self.global_model)?,
                global_accuracy,
                data_total,
                self.queue.now(),
                self.server_sequence,
            );
            let block = mine_block(
                vec![record],
                self.chain.last().expect("genesis exists"),
                self.cfg.ledger.difficulty,
                self.miner_for_round(round),
                self.queue.now(),
            )?;
            blocks_appended.push(block.hash().to_hex());
            self.chain.push(block);
        }

        // broadcast: chain synchronization plus the model download leg
        let head = self.chain.last().expect("genesis exists").hash();
        for client in 0..self.clients.len() {
            let t_bs = if is_bfmeta {
                self.cfg.latency.t_bs.sample(&mut rng_lat)
            } else {
                0
            };
            let t_sc = self.cfg.latency.t_s_to_c.sample(&mut rng_lat);
            round_lat.t_bs = round_lat.t_bs.max(t_bs);
            round_lat.t_s_to_c = round_lat.t_s_to_c.max(t_sc);
            self.queue.schedule_after(
                t_bs + t_sc,
                EventKind::Broadcast {
                    client: self.clients[client].address.clone(),
                    head,
                },
            )?;
        }
        self.queue.run_until_idle(|_, _| Ok(()))?;
        if is_bfmeta {
            for client in &mut self.clients {
                client.head = Some(head);
            }
        }
        // server bookkeeping tick so the next round starts strictly later
        self.queue.advance_to(self.queue.now() + 1);

        // reputation: only this round's participants move
        if is_bfmeta {
            let basis: Vec<f64> = results
                .iter()
                .filter(|r| {
                    matches!(
                        r.reason,
                        Reason::Ok | Reason::HashMismatch | Reason::LowAccuracy
                    )
                })
                .map(|r| r.measured_accuracy)
                .collect();
            let theta_min = basis.iter().cloned().fold(f64::INFINITY, f64::min);
            let theta_max = basis.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            for r in &results {
                let addr = &r.client_address;
                let Some(&idx) = self.index_of.get(addr) else {
                    continue; // fabricated identity, no ledger entry
                };
                if self.blacklist.contains(addr) {
                    self.reputation.set(addr.clone(), 0.0);
                    continue;
                }
                if matches!(
                    r.reason,
                    Reason::Ok | Reason::HashMismatch | Reason::LowAccuracy
                ) {
                    let quality = quality_factor(r.measured_accuracy, theta_min, theta_max)?;
                    let quantity = quantity_factor(
                        self.clients[idx].data_size(),
                        self.size_bounds.0,
                        self.size_bounds.1,
                    )?;
                    let quantity_prev =
                        self.quantity_prev.get(addr).copied().unwrap_or(quantity);
                    let updated = update_reputation(
                        self.reputation.get(addr),
                        r.alpha,
                        r.beta,
                        quality,
                        quantity_prev,
                        &self.cfg.reputation,
                    );
                    self.reputation.set(addr.clone(), updated);
                    self.quantity_prev.insert(addr.clone(), quantity);
                }
            }
        }

        self.latency.rounds.push(round_lat);
        let included: Vec<Address> = results
            .iter()
            .filter(|r| r.included)
            .map(|r| r.client_address.clone())
            .collect();
        let n_flagged = results.iter().filter(|r| !r.included).count();
        Ok(RoundReport {
            round,
            selection_probabilities: probs,
            selected,
            screening: results,
            included,
            n_flagged,
            global_accuracy,
            aggregation_empty,
            reputation: self.reputation.snapshot(),
            latency: round_lat,
            t_b_ms: tick_to_ms(round_lat.blockchain()),
            blocks: blocks_appended,
        })
    }
}

/// A finished run: the report plus the artifacts the report points at.
pub struct ExperimentOutcome {
    pub report: ExperimentReport,
    pub chain: Vec<Block>,
    pub auth: AuthorizationList,
    pub global_model: ModelParameters,
}

/// Runs rounds until the holdout accuracy reaches the target or the round
/// cap, then assembles the report.
pub fn run_experiment(cfg: ExperimentConfig) -> Result<ExperimentOutcome> {
    let target = cfg.experiment.target_accuracy;
    let max_rounds = cfg.experiment.max_rounds;
    let mut state = ExperimentState::init(cfg)?;
    let mut rounds: Vec<RoundReport> = Vec::new();
    let mut reached_target = false;
    while state.round < max_rounds {
        let report = state.run_round()?;
        let accuracy = report.global_accuracy;
        rounds.push(report);
        if accuracy >= target {
            reached_target = true;
            break;
        }
    }
    let final_accuracy = rounds.last().map_or(0.0, |r| r.global_accuracy);
    let report = ExperimentReport {
        mode: state.cfg.experiment.mode,
        seed: state.cfg.experiment.seed,
        target_accuracy: target,
        realized_rounds: state.round,
        reached_target,
        final_accuracy,
        behaviors: state.behaviors_by_address(),
        initial_reputation: state.initial_reputation.clone(),
        initial_selection_probabilities: state.initial_probs.clone(),
        rounds,
        latency: state.latency.clone(),
        total_system_latency_ms: tick_to_ms(state.latency.total_system()),
        total_blockchain_latency_ms: tick_to_ms(state.latency.total_blockchain()),
        total_latency_ms: tick_to_ms(state.latency.total()),
        final_reputation: state.reputation_snapshot(),
        blacklist: state.blacklist.iter().map(|(a, &r)| (a.clone(), r)).collect(),
    };
    Ok(ExperimentOutcome {
        report,
        chain: state.chain,
        auth: state.auth,
        global_model: state.global_model,
    })
}

/// Convenience wrapper: run and write all outputs under `out_dir`.
pub fn run_and_emit(cfg: ExperimentConfig, out_dir: &std::path::Path) -> Result<(ExperimentOutcome, EmittedPaths)> {
    let outcome = run_experiment(cfg)?;
    let paths = crate::report::emit_reports(
        &outcome.report,
        &outcome.chain,
        &outcome.auth,
        &outcome.global_model,
        out_dir,
    )?;
    Ok((outcome, paths))
}
