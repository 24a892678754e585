use super::*;
use crate::crypto::{derive_seed, SigningKey};
use crate::fl::{Activation, MlpArchitecture};
use crate::ledger::{genesis_block, mine_block};

fn arch() -> MlpArchitecture {
    MlpArchitecture::new(vec![3, 3], Activation::Relu).unwrap()
}

fn key(i: usize) -> SigningKey {
    SigningKey::from_seed(derive_seed(7, &format!("mon-client-{i}")))
}

fn addr(i: usize) -> Address {
    Address::new(format!("client-{i:02}"))
}

fn auth(n: usize) -> AuthorizationList {
    AuthorizationList::new((0..n).map(|i| (addr(i), key(i).verify_key()))).unwrap()
}

/// Strong-diagonal model: predicts the one-hot class, accuracy 1.0 on the
/// one-hot test set below. `scale=0` gives the uniform model instead.
fn diag_model(scale: f64) -> ModelParameters {
    let a = arch();
    let mut values = vec![0.0; a.param_count()];
    for c in 0..3 {
        values[c * 3 + c] = scale;
    }
    ModelParameters::new(a, values).unwrap()
}

fn one_hot_test_set() -> Dataset {
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for i in 0..30 {
        let c = i % 3;
        let mut row = [0.0; 3];
        row[c] = 1.0;
        features.extend_from_slice(&row);
        labels.push(c);
    }
    Dataset::new(features, 3, labels, 3).unwrap()
}

fn signed_submission(
    i: usize,
    params: &ModelParameters,
    round: u64,
    seq: u64,
    ts: u64,
) -> Submission {
    let record = ModelRecord::signed(
        &key(i),
        addr(i),
        round,
        hash_model(params).unwrap(),
        0.9,
        100,
        ts,
        seq,
    );
    Submission::new(params.clone(), record, ts + 1)
}

/// Mines the gate-surviving records and screens the batch, the way the
/// round loop does.
fn run_screen(
    subs: &[Submission],
    chain: &mut Vec<Block>,
    auth: &AuthorizationList,
    test_set: &Dataset,
    blacklist: &Blacklist,
    slack: f64,
) -> Vec<ScreeningResult> {
    let pre_len = chain.len();
    let admitted: Vec<ModelRecord> = subs
        .iter()
        .filter(|s| {
            gate_submission(s, &chain[..pre_len], auth, blacklist)
                .unwrap()
                .is_none()
        })
        .map(|s| s.record.clone())
        .collect();
    if !admitted.is_empty() {
        let block = mine_block(
            admitted,
            chain.last().unwrap(),
            0,
            Address::new("miner-0"),
            chain.len() as u64 * 100,
        )
        .unwrap();
        chain.push(block);
    }
    screen(
        subs,
        &ScreenContext {
            chain,
            pre_mining_len: pre_len,
            auth,
            test_set,
            blacklist,
            slack,
        },
    )
    .unwrap()
}

fn fresh_chain() -> Vec<Block> {
    vec![genesis_block(0, Address::new("miner-0"), 0).unwrap()]
}

#[test]
fn first_submission_is_never_lazy() {
    let chain = fresh_chain();
    let sub = signed_submission(0, &diag_model(5.0), 1, 1, 10);
    assert!(!detect_lazy(&sub, &chain).unwrap());
}

#[test]
fn bit_identical_resubmission_is_lazy() {
    let mut chain = fresh_chain();
    let auth = auth(1);
    let bl = Blacklist::new();
    let test = one_hot_test_set();
    let model = diag_model(5.0);

    let first = signed_submission(0, &model, 1, 1, 10);
    run_screen(&[first], &mut chain, &auth, &test, &bl, 1.0);

    // same parameters, fresh record
    let second = signed_submission(0, &model, 2, 2, 20);
    assert!(detect_lazy(&second, &chain).unwrap());

    // any parameter change clears the flag
    let mut changed = model.values().to_vec();
    changed[0] += 1e-9;
    let changed = ModelParameters::new(model.arch().clone(), changed).unwrap();
    let third = signed_submission(0, &changed, 2, 2, 20);
    assert!(!detect_lazy(&third, &chain).unwrap());
}

#[test]
fn falsification_catches_post_signing_tamper() {
    let mut chain = fresh_chain();
    let auth = auth(1);
    let bl = Blacklist::new();
    let test = one_hot_test_set();
    let model = diag_model(5.0);

    // honest: recomputed hash equals the mined one
    let honest = signed_submission(0, &model, 1, 1, 10);
    let results = run_screen(
        &[honest.clone()],
        &mut chain,
        &auth,
        &test,
        &bl,
        1.0,
    );
    assert!(!results[0].alpha);

    // tamper the transmitted params after the record was mined
    let mut tampered = honest;
    let mut vals = tampered.params.values().to_vec();
    vals[1] += 0.5;
    tampered.params = ModelParameters::new(tampered.params.arch().clone(), vals).unwrap();
    assert!(detect_falsification(&tampered, &chain).unwrap());
}

#[test]
fn falsification_before_mining_is_pending() {
    let chain = fresh_chain();
    let sub = signed_submission(0, &diag_model(5.0), 1, 1, 10);
    match detect_falsification(&sub, &chain) {
        Err(Error::VerificationPending { round: 1, .. }) => {}
        other => panic!("expected pending verification, got {other:?}"),
    }
}

#[test]
fn threshold_is_slacked_mean() {
    assert_eq!(accuracy_threshold(&[0.8, 0.6], 1.0).unwrap(), 0.7);
    let t = accuracy_threshold(&[0.9, 0.5, 0.7], 0.9).unwrap();
    assert!((t - 0.63).abs() < 1e-12);
    assert!(accuracy_threshold(&[], 1.0).is_err());
}

#[test]
fn equal_accuracies_exclude_nobody() {
    let mut chain = fresh_chain();
    let auth = auth(3);
    let bl = Blacklist::new();
    let test = one_hot_test_set();
    let subs: Vec<Submission> = (0..3)
        .map(|i| signed_submission(i, &diag_model(5.0), 1, 1, 10 + i as u64))
        .collect();
    let results = run_screen(&subs, &mut chain, &auth, &test, &bl, 1.0);
    assert!(results.iter().all(|r| r.included && r.reason == Reason::Ok));
}

#[test]
fn replay_of_mined_record_is_flagged() {
    let mut chain = fresh_chain();
    let auth = auth(1);
    let bl = Blacklist::new();
    let test = one_hot_test_set();

    let original = signed_submission(0, &diag_model(5.0), 1, 1, 10);
    run_screen(
        std::slice::from_ref(&original),
        &mut chain,
        &auth,
        &test,
        &bl,
        1.0,
    );

    // verbatim re-emission
    assert!(check_replay(&original, &chain));

    // fresh sequence number and later timestamp pass
    let fresh = signed_submission(0, &diag_model(4.0), 2, 2, 20);
    assert!(!check_replay(&fresh, &chain));

    // fresh hash but stale sequence number still trips the rule
    let stale_seq = signed_submission(0, &diag_model(3.0), 2, 1, 20);
    assert!(check_replay(&stale_seq, &chain));

    // fresh sequence number but stale timestamp trips it too
    let stale_ts = signed_submission(0, &diag_model(2.0), 2, 2, 10);
    assert!(check_replay(&stale_ts, &chain));
}

#[test]
fn duplicate_submitter_gets_beta_and_only_it() {
    let mut chain = fresh_chain();
    let auth = auth(3);
    let mut bl = Blacklist::new();
    let test = one_hot_test_set();

    let round1: Vec<Submission> = (0..3)
        .map(|i| signed_submission(i, &diag_model(5.0 + i as f64), 1, 1, 10 + i as u64))
        .collect();
    run_screen(&round1, &mut chain, &auth, &test, &bl, 1.0);

    // client 1 re-submits its round-1 parameters (diag 6.0) bit for bit;
    // the others move to fresh values
    let round2 = vec![
        signed_submission(0, &diag_model(8.0), 2, 2, 20),
        signed_submission(1, &diag_model(6.0), 2, 2, 21),
        signed_submission(2, &diag_model(9.0), 2, 2, 22),
    ];
    let results = run_screen(&round2, &mut chain, &auth, &test, &mut bl, 1.0);
    assert!(results[0].included);
    assert!(!results[1].included);
    assert!(results[1].beta);
    assert_eq!(results[1].reason, Reason::LazyDuplicate);
    assert!(results[2].included);
}

#[test]
fn blacklisted_client_is_excluded_regardless_of_content() {
    let mut chain = fresh_chain();
    let auth = auth(2);
    let mut bl = Blacklist::new();
    bl.add(addr(0), 1);
    let test = one_hot_test_set();
    let subs = vec![
        signed_submission(0, &diag_model(5.0), 1, 1, 10),
        signed_submission(1, &diag_model(5.0), 1, 1, 11),
    ];
    let results = run_screen(&subs, &mut chain, &auth, &test, &bl, 1.0);
    assert_eq!(results[0].reason, Reason::Blacklisted);
    assert!(!results[0].included);
    assert!(results[1].included);
    // the blacklisted client's record never reached the chain
    assert_eq!(chain.last().unwrap().records.len(), 1);
}

#[test]
fn low_accuracy_is_excluded_but_not_blacklisted() {
    let mut chain = fresh_chain();
    let auth = auth(3);
    let bl = Blacklist::new();
    let test = one_hot_test_set();
    let subs = vec![
        signed_submission(0, &diag_model(5.0), 1, 1, 10),
        signed_submission(1, &diag_model(5.0), 1, 1, 11),
        // uniform model: ~1/3 accuracy, well below the batch mean
        signed_submission(2, &diag_model(0.0), 1, 1, 12),
    ];
    let results = run_screen(&subs, &mut chain, &auth, &test, &bl, 1.0);
    assert!(results[0].included && results[1].included);
    let low = &results[2];
    assert_eq!(low.reason, Reason::LowAccuracy);
    assert!(!low.included && !low.alpha && !low.beta);
    assert!(!blacklists(low.reason));
    // its record is still on the chain: exclusion is aggregation-only
    assert_eq!(chain.last().unwrap().records.len(), 3);
}

#[test]
fn included_implies_clean_flags() {
    // direct restatement of the result invariant over a mixed batch
    let mut chain = fresh_chain();
    let auth = auth(4);
    let bl = Blacklist::new();
    let test = one_hot_test_set();
    let round1: Vec<Submission> = (0..4)
        .map(|i| signed_submission(i, &diag_model(5.0 + i as f64), 1, 1, 10 + i as u64))
        .collect();
    run_screen(&round1, &mut chain, &auth, &test, &bl, 1.0);
    let round2 = vec![
        signed_submission(0, &diag_model(9.0), 2, 2, 20), // fresh params
        signed_submission(1, &diag_model(6.0), 2, 2, 21), // exact duplicate of its round 1
        signed_submission(2, &diag_model(10.0), 2, 2, 22), // fresh params
        signed_submission(3, &diag_model(0.0), 2, 2, 23), // low accuracy
    ];
    let results = run_screen(&round2, &mut chain, &auth, &test, &bl, 1.0);
    for r in &results {
        assert_eq!(r.included, !r.alpha && !r.beta && r.reason == Reason::Ok);
    }
}

#[test]
fn screening_is_order_insensitive() {
    let mut chain = fresh_chain();
    let auth = auth(4);
    let bl = Blacklist::new();
    let test = one_hot_test_set();
    let round1: Vec<Submission> = (0..4)
        .map(|i| signed_submission(i, &diag_model(5.0 + i as f64), 1, 1, 10 + i as u64))
        .collect();
    run_screen(&round1, &mut chain, &auth, &test, &bl, 1.0);

    let batch = vec![
        signed_submission(0, &diag_model(9.0), 2, 2, 20),
        signed_submission(1, &diag_model(6.0), 2, 2, 21), // lazy duplicate of its round 1
        signed_submission(2, &diag_model(10.0), 2, 2, 22),
        signed_submission(3, &diag_model(0.0), 2, 2, 23), // low accuracy
    ];

    let mut chain_a = chain.clone();
    let results_a = run_screen(&batch, &mut chain_a, &auth, &test, &bl, 1.0);

    let perm = [2usize, 0, 3, 1];
    let permuted: Vec<Submission> = perm.iter().map(|&i| batch[i].clone()).collect();
    let mut chain_b = chain.clone();
    let results_b = run_screen(&permuted, &mut chain_b, &auth, &test, &bl, 1.0);

    assert!(results_a[1].beta, "baseline batch must contain the lazy case");
    assert_eq!(results_a[3].reason, Reason::LowAccuracy);
    for (j, &orig) in perm.iter().enumerate() {
        assert_eq!(results_a[orig], results_b[j]);
    }
}
