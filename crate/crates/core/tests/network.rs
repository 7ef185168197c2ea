mod common;

use std::net::TcpListener;
use std::thread;
use std::time::Duration;

use common::{hospital, max_abs_diff, networked_session};
use datacollab::netproto::{run_worker, serve_master_on, Kind, NetOptions};
use datacollab::pipeline::{prepare_trial, steps, RunConfig, Seeds};
use datacollab::Error;

fn config(parties: usize) -> RunConfig {
    RunConfig {
        r: 300,
        party_sizes: vec![10; parties],
        seeds: Seeds::all(77),
        ..RunConfig::default()
    }
}

fn options(session: &str, secs: u64) -> NetOptions {
    NetOptions {
        session_id: session.into(),
        timeout: Duration::from_secs(secs),
    }
}

#[test]
fn four_workers_match_in_process_run() {
    let cfg = config(4);
    let trial = prepare_trial(&cfg, &hospital(200, 1)).unwrap();
    let local = steps::run_proposed(&cfg, &trial).unwrap();
    let net = networked_session(&cfg, &trial, &options("eq", 30));
    let summary = net.master.unwrap();
    assert_eq!(summary.parties, 4);
    assert_eq!(summary.anchor_rows, 300);
    for (i, w) in net.workers.into_iter().enumerate() {
        let w = w.unwrap();
        assert_eq!(max_abs_diff(&w.anchor_prediction, &local.anchor_predictions[i]), 0.0);
        assert_eq!(max_abs_diff(&summary.anchor_predictions[i], &local.anchor_predictions[i]), 0.0);
        let res = w.result.unwrap();
        assert_eq!(max_abs_diff(&res.predictions[0], &local.predictions[i]), 0.0);
    }
}

#[test]
fn single_party_transcript() {
    let cfg = config(1);
    let trial = prepare_trial(&cfg, &hospital(60, 2)).unwrap();
    let net = networked_session(&cfg, &trial, &options("one", 30));
    net.master.unwrap();
    net.workers.into_iter().for_each(|w| drop(w.unwrap()));
    let kinds: Vec<(bool, Kind)> = net.log.iter().map(|t| (t.upstream, t.kind)).collect();
    assert_eq!(
        kinds,
        vec![
            (true, Kind::Hello),
            (true, Kind::AnchorPart),
            (false, Kind::AnchorFull),
            (true, Kind::Shares),
            (false, Kind::AnchorPred),
            (false, Kind::Bye),
        ]
    );
}

#[test]
fn anchor_broadcast_waits_for_every_part() {
    let cfg = config(3);
    let trial = prepare_trial(&cfg, &hospital(100, 3)).unwrap();
    let net = networked_session(&cfg, &trial, &options("barrier", 30));
    net.master.unwrap();
    let first_full = net.log.iter().position(|t| t.kind == Kind::AnchorFull).unwrap();
    let parts_before = net.log[..first_full].iter().filter(|t| t.kind == Kind::AnchorPart).count();
    assert_eq!(parts_before, 3);
    let first_pred = net.log.iter().position(|t| t.kind == Kind::AnchorPred).unwrap();
    let shares_before = net.log[..first_pred].iter().filter(|t| t.kind == Kind::Shares).count();
    assert_eq!(shares_before, 3);
}

#[test]
fn missing_party_aborts_after_timeout() {
    let cfg = config(2);
    let trial = prepare_trial(&cfg, &hospital(60, 4)).unwrap();
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    let opts = options("lonely", 1);
    let master = {
        let (cfg, opts) = (cfg.clone(), opts.clone());
        thread::spawn(move || serve_master_on(&listener, &cfg, 2, &opts))
    };
    let worker = run_worker(&addr, &cfg, 0, &trial.parties[0], None, &options("lonely", 10));
    assert!(matches!(master.join().unwrap(), Err(Error::SessionAborted(_))));
    assert!(matches!(worker, Err(Error::SessionAborted(msg)) if msg.contains("aborted")));
}

#[test]
fn duplicate_party_id_is_rejected() {
    let cfg = config(2);
    let trial = prepare_trial(&cfg, &hospital(60, 5)).unwrap();
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    let opts = options("dup", 20);
    let master = {
        let (cfg, opts) = (cfg.clone(), opts.clone());
        thread::spawn(move || serve_master_on(&listener, &cfg, 2, &opts))
    };
    let spawn = |party: usize, data_index: usize| {
        let (cfg, opts, addr) = (cfg.clone(), opts.clone(), addr.clone());
        let data = trial.parties[data_index].clone();
        thread::spawn(move || run_worker(&addr, &cfg, party, &data, None, &opts))
    };
    let a = spawn(0, 0);
    thread::sleep(Duration::from_millis(200));
    let dup = spawn(0, 1).join().unwrap();
    assert!(dup.is_err());
    let b = spawn(1, 1);
    a.join().unwrap().unwrap();
    b.join().unwrap().unwrap();
    master.join().unwrap().unwrap();
}

#[test]
fn networked_session_requires_anchor_seed() {
    let mut cfg = config(1);
    cfg.seeds.anchor_seed = None;
    let trial = prepare_trial(&RunConfig { seeds: Seeds::all(1), ..cfg.clone() }, &hospital(60, 6)).unwrap();
    let res = run_worker("127.0.0.1:9", &cfg, 0, &trial.parties[0], None, &options("x", 1));
    assert!(matches!(res, Err(Error::Configuration(_))));
}
