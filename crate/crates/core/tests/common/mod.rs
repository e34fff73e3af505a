#![allow(dead_code)]

use std::time::Duration;

use collatz_kv::embedded::EmbeddedStore;
use collatz_kv::harness::{Backend, BenchConfig, Target};
use collatz_kv::resp::{RespServer, ServerHandle};
use collatz_kv::store::Store;

/// Steps from `n` to 1 and the largest term after `n`, by plain iteration.
pub fn trajectory(mut n: u64) -> (u64, u64) {
    let (mut steps, mut peak) = (0, 0);
    while n != 1 {
        n = if n % 2 == 0 { n / 2 } else { 3 * n + 1 };
        peak = peak.max(n);
        steps += 1;
    }
    (steps, peak)
}

/// Longest sequence and highest term over starts `1..=limit`, no memoization.
pub fn brute_force(limit: u64) -> (u64, u64) {
    (1..=limit).map(trajectory).fold((0, 0), |(l, h), (s, p)| (l.max(s), h.max(p)))
}

/// Every term except 1 visited from starts `1..=limit`, with its steps to 1.
pub fn brute_force_table(limit: u64) -> std::collections::BTreeMap<u64, u64> {
    let mut table = std::collections::BTreeMap::new();
    for start in 1..=limit {
        let mut n = start;
        while n != 1 {
            table.insert(n, trajectory(n).0);
            n = if n % 2 == 0 { n / 2 } else { 3 * n + 1 };
        }
    }
    table
}

/// A store backend under test; the RESP variant owns its server.
pub struct Fixture {
    pub name: &'static str,
    pub target: Target,
    pub server: Option<ServerHandle>,
}

impl Fixture {
    pub fn embedded() -> Self {
        Fixture { name: "embedded", target: Target::Embedded(EmbeddedStore::new()), server: None }
    }

    pub fn resp() -> Self {
        let server = RespServer::bind("127.0.0.1:0", EmbeddedStore::new()).unwrap().spawn().unwrap();
        let target = Target::Resp { addr: server.addr().to_string(), retry_limit: 10_000 };
        Fixture { name: "resp", target, server: Some(server) }
    }

    pub fn both() -> [Fixture; 2] {
        [Fixture::embedded(), Fixture::resp()]
    }

    pub fn backend(&self) -> Backend {
        self.target.backend()
    }

    pub fn open(&self) -> Box<dyn Store + Send> {
        self.target.open().unwrap()
    }

    pub fn config(&self, workers: usize, limit: u64, block_size: u64) -> BenchConfig {
        let mut c = BenchConfig::new(self.backend());
        c.workers = workers;
        c.limit = limit;
        c.block_size = block_size;
        c.poll_interval = Duration::from_millis(5);
        c.force_flush = true;
        c
    }
}

/// Address of a reachable RESP2 server outside this process, if any:
/// `RESP_SERVER_ADDR`, else 127.0.0.1:6379.
pub fn external_server() -> Option<String> {
    let addr = std::env::var("RESP_SERVER_ADDR").unwrap_or_else(|_| "127.0.0.1:6379".into());
    let sock: std::net::SocketAddr = std::net::ToSocketAddrs::to_socket_addrs(&addr).ok()?.next()?;
    std::net::TcpStream::connect_timeout(&sock, Duration::from_millis(200)).ok()?;
    let mut s = collatz_kv::resp::RespStore::connect(sock).ok()?;
    s.ping().ok()?;
    Some(addr)
}

/// Exercises the client's command subset against the server at `addr`,
/// touching only uniquely named keys and removing them afterwards.
pub fn client_subset(addr: &str) -> Result<(), String> {
    use collatz_kv::resp::RespStore;
    use collatz_kv::store::{NodeHandle, WatchMulti};

    let tag = format!(
        "collatz-kv-check-{}-{}",
        std::process::id(),
        std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).unwrap().as_nanos()
    );
    let scalar = NodeHandle::root(format!("{tag}-s")).map_err(|e| e.to_string())?;
    let hash = NodeHandle::root(format!("{tag}-h")).map_err(|e| e.to_string())?;
    let mut a = RespStore::connect(addr).map_err(|e| e.to_string())?;
    let mut b = RespStore::connect(addr).map_err(|e| e.to_string())?;
    let check = |ok: bool, what: &str| if ok { Ok(()) } else { Err(what.to_string()) };
    let mut run = || -> Result<(), String> {
        let e = |e: collatz_kv::Error| e.to_string();
        check(scalar.get(&mut a).map_err(e)?.is_none(), "GET absent")?;
        scalar.set(&mut a, "7").map_err(e)?;
        check(scalar.get(&mut a).map_err(e)? == Some(b"7".to_vec()), "SET/GET")?;
        check(scalar.incr(&mut a, -2).map_err(e)? == 5, "INCRBY")?;
        let taken = hash.child(1).map_err(e)?.child("taken").map_err(e)?;
        check(taken.incr(&mut a, 1).map_err(e)? == 1, "HINCRBY first")?;
        check(taken.incr(&mut b, 1).map_err(e)? == 2, "HINCRBY second")?;
        hash.set_tree(&mut a, [(1, "0"), (2, "10")]).map_err(e)?;
        check(hash.subtree_size(&mut a).map_err(e)? == 3, "HLEN")?;
        check(hash.child(2).map_err(e)?.get(&mut b).map_err(e)? == Some(b"10".to_vec()), "HGET")?;
        check(a.exists(&hash).map_err(e)?, "EXISTS")?;
        check(a.children(&hash).map_err(e)?.len() == 3, "HGETALL")?;
        hash.child(2).map_err(e)?.delete_tree(&mut a).map_err(e)?;
        check(hash.subtree_size(&mut a).map_err(e)? == 2, "HDEL")?;

        a.watch(&[&scalar]).map_err(e)?;
        scalar.set(&mut b, "other").map_err(e)?;
        a.multi().map_err(e)?;
        scalar.set(&mut a, "mine").map_err(e)?;
        check(!a.exec().map_err(e)?, "EXEC after a watched write must abort")?;
        a.watch(&[&scalar]).map_err(e)?;
        a.multi().map_err(e)?;
        scalar.set(&mut a, "mine").map_err(e)?;
        check(a.exec().map_err(e)?, "EXEC without interference must commit")?;
        let attempts = a
            .run_transaction(&mut |tx| {
                let v = hash.child(1).unwrap().get_u64_or(tx, 0)?;
                hash.child(1).unwrap().set(tx, (v + 1).to_string())
            })
            .map_err(e)?;
        check(attempts == 1, "uncontended transaction")?;
        check(hash.child(1).map_err(e)?.get(&mut b).map_err(e)? == Some(b"1".to_vec()), "transaction write")?;
        Ok(())
    };
    let result = run();
    let _ = scalar.delete_tree(&mut a);
    let _ = hash.delete_tree(&mut a);
    result
}
