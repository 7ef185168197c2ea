#![allow(dead_code)]

use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use datacollab::dataio::{synth_hospital, LabeledDataset};
use datacollab::matrixkit::{Matrix, RandomSource};
use datacollab::netproto::{decode_frame, read_frame_bytes, run_worker, serve_master_on, Kind, NetOptions, SessionSummary, WorkerOutcome};
use datacollab::pipeline::{RunConfig, TrialData};
use datacollab::Result;

/// One frame seen by the tap.
#[derive(Debug, Clone)]
pub struct Tapped {
    /// Worker to master.
    pub upstream: bool,
    pub conn: usize,
    pub kind: Kind,
    pub party_id: usize,
    pub widths: Vec<usize>,
}

pub type Log = Arc<Mutex<Vec<Tapped>>>;

fn pump(mut from: TcpStream, mut to: TcpStream, upstream: bool, conn: usize, log: Log) {
    use std::io::Write;
    while let Ok(Some(frame)) = read_frame_bytes(&mut from) {
        let msg = decode_frame(&frame).expect("tap saw an undecodable frame");
        log.lock().unwrap().push(Tapped {
            upstream,
            conn,
            kind: msg.kind(),
            party_id: msg.party_id,
            widths: msg.body.matrix_widths(),
        });
        if to.write_all(&frame).is_err() {
            break;
        }
    }
    let _ = to.shutdown(Shutdown::Write);
}

/// Transparent proxy in front of `master` recording every frame of the
/// first `connections` connections.
pub fn start_tap(master: SocketAddr, connections: usize) -> (SocketAddr, Log) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let log: Log = Arc::default();
    let shared = log.clone();
    thread::spawn(move || {
        for conn in 0..connections {
            let Ok((client, _)) = listener.accept() else { return };
            let server = TcpStream::connect(master).unwrap();
            let (c2, s2) = (client.try_clone().unwrap(), server.try_clone().unwrap());
            let (l1, l2) = (shared.clone(), shared.clone());
            thread::spawn(move || pump(client, server, true, conn, l1));
            thread::spawn(move || pump(s2, c2, false, conn, l2));
        }
    });
    (addr, log)
}

pub struct NetworkRun {
    pub master: Result<SessionSummary>,
    pub workers: Vec<Result<WorkerOutcome>>,
    pub log: Vec<Tapped>,
}

/// Run a full session over loopback with every worker behind the tap.
pub fn networked_session(config: &RunConfig, trial: &TrialData, options: &NetOptions) -> NetworkRun {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let master_addr = listener.local_addr().unwrap();
    let parties = trial.parties.len();
    let (tap_addr, log) = start_tap(master_addr, parties);

    let master: JoinHandle<Result<SessionSummary>> = {
        let (config, options) = (config.clone(), options.clone());
        thread::spawn(move || serve_master_on(&listener, &config, parties, &options))
    };
    let workers: Vec<JoinHandle<Result<WorkerOutcome>>> = trial
        .parties
        .iter()
        .enumerate()
        .map(|(i, data)| {
            let (config, options, data, test) = (config.clone(), options.clone(), data.clone(), trial.test.clone());
            let addr = tap_addr.to_string();
            thread::spawn(move || run_worker(&addr, &config, i, &data, Some(&test), &options))
        })
        .collect();
    let workers: Vec<_> = workers.into_iter().map(|h| h.join().unwrap()).collect();
    let master = master.join().unwrap();
    // Let the pumps flush the last frames into the log.
    thread::sleep(Duration::from_millis(50));
    let log = log.lock().unwrap().clone();
    NetworkRun { master, workers, log }
}

pub fn hospital(n: usize, seed: u64) -> LabeledDataset {
    synth_hospital(n, &mut RandomSource::seeded(seed)).unwrap()
}

pub fn max_abs_diff(a: &Matrix, b: &Matrix) -> f64 {
    assert_eq!(a.shape(), b.shape());
    (a - b).amax()
}
