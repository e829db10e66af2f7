use std::net::SocketAddr;
use std::sync::{Arc, Barrier};
use std::thread;
use std::time::{Duration, Instant};

use proptest::prelude::*;
use rasterflow::comm::{connect, SocketRendezvous};
use rasterflow::{comm_init, Communicator, Error, ReduceOp, TransportConfig};

const T: Duration = Duration::from_secs(10);

/// Runs `f` on every rank of an in-process group and returns results in
/// rank order.
fn inproc<R: Send + 'static>(world: usize, f: impl Fn(Communicator) -> R + Send + Sync + 'static) -> Vec<R> {
    let f = Arc::new(f);
    let handles: Vec<_> = Communicator::in_process_group(world, T)
        .into_iter()
        .map(|c| {
            let f = f.clone();
            thread::spawn(move || f(c))
        })
        .collect();
    handles.into_iter().map(|h| h.join().unwrap()).collect()
}

/// Same over the TCP transport, one thread per rank.
fn socket<R: Send + 'static>(world: usize, f: impl Fn(Communicator) -> R + Send + Sync + 'static) -> Vec<R> {
    let f = Arc::new(f);
    let rendezvous = SocketRendezvous::bind("127.0.0.1:0".parse().unwrap()).unwrap();
    let addr = rendezvous.local_addr().unwrap();
    let mut handles = Vec::new();
    {
        let f = f.clone();
        handles.push(thread::spawn(move || f(rendezvous.accept(world, T).unwrap())));
    }
    for rank in 1..world {
        let f = f.clone();
        handles.push(thread::spawn(move || f(connect(addr, rank, world, T).unwrap())));
    }
    handles.into_iter().map(|h| h.join().unwrap()).collect()
}

type Runner = fn(usize, fn(Communicator) -> Vec<u8>) -> Vec<Vec<u8>>;

fn runners() -> [(&'static str, Runner); 2] {
    [("inproc", |w, f| inproc(w, f)), ("socket", |w, f| socket(w, f))]
}

#[test]
fn loopback_world_one() {
    let c = comm_init(1, 0, &TransportConfig::Loopback).unwrap();
    assert_eq!(c.world_size(), 1);
    c.barrier().unwrap();
    assert_eq!(c.gather_to_root(b"only").unwrap(), Some(vec![b"only".to_vec()]));
    assert_eq!(c.broadcast_from_root(&[9]).unwrap(), vec![9]);
}

#[test]
fn four_workers_reach_first_barrier() {
    for (name, run) in runners() {
        let out = run(4, |c| {
            c.barrier().unwrap();
            vec![c.rank() as u8]
        });
        assert_eq!(out, vec![vec![0], vec![1], vec![2], vec![3]], "{name}");
    }
}

#[test]
fn all_reduce_examples() {
    for (name, run) in runners() {
        let sums = run(4, |c| {
            let r = c.all_reduce(&[c.rank() as u64], ReduceOp::Sum).unwrap();
            r[0].to_le_bytes().to_vec()
        });
        assert!(sums.iter().all(|s| s == &6u64.to_le_bytes()), "{name}");

        let mins = run(3, |c| {
            let r = c.all_reduce(&[c.rank() as i64 + 10], ReduceOp::Min).unwrap();
            r[0].to_le_bytes().to_vec()
        });
        assert!(mins.iter().all(|s| s == &10i64.to_le_bytes()), "{name}");
    }
}

#[test]
fn all_reduce_random_vectors_match_elementwise_addition() {
    let vectors: [[i64; 5]; 2] = [[17, -4, 900, 3, 12345], [-17, 8, 1, 77, -5]];
    let expected: Vec<i64> = (0..5).map(|i| vectors[0][i] + vectors[1][i]).collect();
    let out = inproc(2, move |c| c.all_reduce(&vectors[c.rank()], ReduceOp::Sum).unwrap());
    assert!(out.iter().all(|v| v == &expected));
}

#[test]
fn all_reduce_length_mismatch_fails_every_rank() {
    for world in [2, 3] {
        let out = inproc(world, |c| {
            let v = vec![1u64; if c.rank() == 1 { 2 } else { 3 }];
            c.all_reduce(&v, ReduceOp::Sum)
        });
        for r in out {
            assert!(matches!(r, Err(Error::Protocol(_))), "{r:?}");
        }
    }
}

#[test]
fn gather_examples() {
    for (name, run) in runners() {
        let out = run(3, |c| {
            let g = c.gather_to_root(format!("r{}", c.rank()).as_bytes()).unwrap();
            match g {
                Some(all) => all.join(&b","[..]),
                None => Vec::new(),
            }
        });
        assert_eq!(out[0], b"r0,r1,r2".to_vec(), "{name}");
        let empties = run(3, |c| match c.gather_to_root(&[]).unwrap() {
            Some(all) => vec![all.len() as u8, all.iter().map(|p| p.len() as u8).sum()],
            None => vec![],
        });
        assert_eq!(empties[0], vec![3, 0], "{name}");
    }
}

#[test]
fn broadcast_examples() {
    for (name, run) in runners() {
        let out = run(4, |c| {
            let v = if c.is_root() { vec![42] } else { vec![7, 7] };
            c.broadcast_from_root(&v).unwrap()
        });
        assert!(out.iter().all(|v| v == &vec![42]), "{name}");
        let composed = run(4, |c| {
            let v = c.broadcast_from_root(&[c.rank() as u8 + 100]).unwrap();
            match c.gather_to_root(&v).unwrap() {
                Some(all) => all.concat(),
                None => Vec::new(),
            }
        });
        assert_eq!(composed[0], vec![100; 4], "{name}");
    }
}

fn staggered(c: Communicator, start: Instant) -> (u128, u128) {
    thread::sleep(Duration::from_millis(40 * c.rank() as u64));
    let entered = start.elapsed().as_nanos();
    c.barrier().unwrap();
    (entered, start.elapsed().as_nanos())
}

#[test]
fn barrier_orders_staggered_entries() {
    let start = Instant::now();
    let a = inproc(4, move |c| staggered(c, start));
    let b = socket(4, move |c| staggered(c, start));
    for (name, out) in [("inproc", a), ("socket", b)] {
        let latest_entry = out.iter().map(|t| t.0).max().unwrap();
        let earliest_exit = out.iter().map(|t| t.1).min().unwrap();
        assert!(earliest_exit >= latest_entry, "{name}: {earliest_exit} < {latest_entry}");
    }
}

#[test]
fn barrier_timeout_names_the_absent_rank() {
    let mut comms = Communicator::in_process_group(3, Duration::from_millis(300));
    let absent = comms.pop().unwrap();
    let handles: Vec<_> = comms.into_iter().map(|c| thread::spawn(move || c.barrier())).collect();
    let results: Vec<_> = handles.into_iter().map(|h| h.join().unwrap()).collect();
    match &results[0] {
        Err(Error::Timeout { operation, missing }) => {
            assert_eq!(*operation, "barrier");
            assert_eq!(missing, &vec![2]);
        }
        other => panic!("root: expected timeout, got {other:?}"),
    }
    assert!(matches!(&results[1], Err(Error::Timeout { .. })));
    drop(absent);
}

#[test]
fn gather_timeout_over_sockets() {
    let rendezvous = SocketRendezvous::bind("127.0.0.1:0".parse().unwrap()).unwrap();
    let addr = rendezvous.local_addr().unwrap();
    let gate = Arc::new(Barrier::new(2));
    let g = gate.clone();
    let peer = thread::spawn(move || {
        let c = connect(addr, 1, 2, T).unwrap();
        g.wait();
        // never joins the gather; keep the link open until the root gives up
        g.wait();
        drop(c);
    });
    let root = rendezvous.accept(2, T).unwrap().with_timeout(Duration::from_millis(200));
    gate.wait();
    let r = root.gather_to_root(b"x");
    gate.wait();
    peer.join().unwrap();
    assert!(matches!(r, Err(Error::Timeout { ref missing, .. }) if missing == &vec![1]), "{r:?}");
}

#[test]
fn mismatched_world_size_is_a_handshake_error() {
    let rendezvous = SocketRendezvous::bind("127.0.0.1:0".parse().unwrap()).unwrap();
    let addr = rendezvous.local_addr().unwrap();
    let root = thread::spawn(move || rendezvous.accept(3, Duration::from_secs(5)));
    let peer = connect(addr, 1, 2, Duration::from_secs(5));
    assert!(matches!(peer, Err(Error::Handshake(_))), "{peer:?}");
    assert!(matches!(root.join().unwrap(), Err(Error::Handshake(_))));
}

#[test]
fn missing_peer_is_a_handshake_timeout() {
    let rendezvous = SocketRendezvous::bind("127.0.0.1:0".parse().unwrap()).unwrap();
    let r = rendezvous.accept(2, Duration::from_millis(200));
    assert!(matches!(r, Err(Error::Timeout { operation: "handshake", ref missing }) if missing == &vec![1]));
}

#[test]
fn unreachable_rendezvous() {
    // bind and drop to find a port nobody listens on
    let addr: SocketAddr = {
        let l = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap()
    };
    let r = comm_init(2, 1, &TransportConfig::Socket { addr, timeout: Duration::from_millis(200) });
    assert!(r.is_err());
}

#[test]
fn collective_results_agree_across_ranks() {
    let out = socket(3, |c| {
        let v = c.all_reduce(&[c.rank() as f64 * 0.1, 1.0 / (c.rank() + 1) as f64], ReduceOp::Sum).unwrap();
        let bytes: Vec<u8> = v.iter().flat_map(|x| x.to_le_bytes()).collect();
        match c.gather_to_root(&bytes).unwrap() {
            Some(all) => vec![all.windows(2).all(|w| w[0] == w[1]) as u8],
            None => vec![],
        }
    });
    assert_eq!(out[0], vec![1]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn sum_is_invariant_under_rank_permutation(values in proptest::collection::vec(-1_000_000i64..1_000_000, 4), rot in 0usize..4) {
        let a = values.clone();
        let mut b = values.clone();
        b.rotate_left(rot);
        let ra = inproc(4, move |c| c.all_reduce(&[a[c.rank()]], ReduceOp::Sum).unwrap()[0]);
        let rb = inproc(4, move |c| c.all_reduce(&[b[c.rank()]], ReduceOp::Sum).unwrap()[0]);
        prop_assert_eq!(ra[0], values.iter().sum::<i64>());
        prop_assert_eq!(ra, rb);
    }
}
