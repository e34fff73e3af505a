//! Minimal RESP2 server over the embedded store's cell map.
//!
//! Every command is atomic: it locks the shards it touches for its whole
//! run. Any write to hash `k` also bumps the version of the bare cell `k`,
//! which is what WATCH records, so watching a hash notices writes to any of
//! its fields. Hierarchical locks are not exposed over the wire.

use std::io::{self, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};

use super::frame::{decode_frame, encode_into, read_line, ProtocolError, RespFrame};
use crate::embedded::{CellMap, EmbeddedStore, Footprint, LockedCells};
use crate::error::Result;
use crate::store::{add_checked, NodeHandle, MAX_VALUE_LEN};

pub const DEFAULT_ADDR: &str = "127.0.0.1:6379";

const WRONG_INT: &str = "ERR value is not an integer or out of range";

/// One parsed data command.
#[derive(Debug, Clone)]
enum DataCmd {
    Get(NodeHandle),
    Set(NodeHandle, Vec<u8>),
    IncrBy(NodeHandle, i64),
    Del(Vec<NodeHandle>),
    Exists(Vec<NodeHandle>),
    HGet(NodeHandle, NodeHandle),
    HSet(NodeHandle, Vec<(NodeHandle, Vec<u8>)>),
    HDel(NodeHandle, Vec<NodeHandle>),
    HLen(NodeHandle),
    HIncrBy(NodeHandle, NodeHandle, i64),
    HGetAll(NodeHandle),
    HExists(NodeHandle, NodeHandle),
    FlushAll,
}

#[derive(Debug)]
enum Cmd {
    Data(DataCmd),
    Ping(Option<Vec<u8>>),
    Echo(Vec<u8>),
    Watch(Vec<NodeHandle>),
    Unwatch,
    Multi,
    Exec,
    Discard,
    Quit,
    // accepted for client compatibility, no effect
    Noop,
    EmptyArray,
}

fn err(msg: impl Into<String>) -> RespFrame {
    RespFrame::Error(msg.into().into_bytes())
}

fn arity(name: &str) -> RespFrame {
    err(format!("ERR wrong number of arguments for '{}' command", name.to_ascii_lowercase()))
}

fn key(k: &[u8]) -> std::result::Result<NodeHandle, RespFrame> {
    NodeHandle::root(k).map_err(|e| err(format!("ERR invalid key: {e}")))
}

fn field(k: &NodeHandle, f: &[u8]) -> std::result::Result<NodeHandle, RespFrame> {
    k.child(f).map_err(|e| err(format!("ERR invalid field: {e}")))
}

fn int_arg(a: &[u8]) -> std::result::Result<i64, RespFrame> {
    std::str::from_utf8(a)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| err(WRONG_INT))
}

fn value_arg(v: &[u8]) -> std::result::Result<Vec<u8>, RespFrame> {
    if v.len() > MAX_VALUE_LEN {
        return Err(err("ERR string exceeds maximum allowed size"));
    }
    Ok(v.to_vec())
}

fn parse(args: &[Vec<u8>]) -> std::result::Result<Cmd, RespFrame> {
    let Some(name) = args.first() else {
        return Ok(Cmd::EmptyArray);
    };
    let name = String::from_utf8_lossy(name).to_ascii_uppercase();
    let a = &args[1..];
    let need = |ok: bool| if ok { Ok(()) } else { Err(arity(&name)) };
    let cmd = match name.as_str() {
        "GET" => {
            need(a.len() == 1)?;
            Cmd::Data(DataCmd::Get(key(&a[0])?))
        }
        "SET" => {
            need(a.len() == 2)?;
            Cmd::Data(DataCmd::Set(key(&a[0])?, value_arg(&a[1])?))
        }
        "INCRBY" => {
            need(a.len() == 2)?;
            Cmd::Data(DataCmd::IncrBy(key(&a[0])?, int_arg(&a[1])?))
        }
        "INCR" => {
            need(a.len() == 1)?;
            Cmd::Data(DataCmd::IncrBy(key(&a[0])?, 1))
        }
        "DEL" => {
            need(!a.is_empty())?;
            Cmd::Data(DataCmd::Del(a.iter().map(|k| key(k)).collect::<std::result::Result<_, _>>()?))
        }
        "EXISTS" => {
            need(!a.is_empty())?;
            Cmd::Data(DataCmd::Exists(a.iter().map(|k| key(k)).collect::<std::result::Result<_, _>>()?))
        }
        "HGET" => {
            need(a.len() == 2)?;
            let k = key(&a[0])?;
            let f = field(&k, &a[1])?;
            Cmd::Data(DataCmd::HGet(k, f))
        }
        "HSET" => {
            need(a.len() >= 3 && a.len() % 2 == 1)?;
            let k = key(&a[0])?;
            let mut pairs = Vec::with_capacity(a.len() / 2);
            for fv in a[1..].chunks(2) {
                pairs.push((field(&k, &fv[0])?, value_arg(&fv[1])?));
            }
            Cmd::Data(DataCmd::HSet(k, pairs))
        }
        "HDEL" => {
            need(a.len() >= 2)?;
            let k = key(&a[0])?;
            let fs = a[1..].iter().map(|f| field(&k, f)).collect::<std::result::Result<_, _>>()?;
            Cmd::Data(DataCmd::HDel(k, fs))
        }
        "HLEN" => {
            need(a.len() == 1)?;
            Cmd::Data(DataCmd::HLen(key(&a[0])?))
        }
        "HINCRBY" => {
            need(a.len() == 3)?;
            let k = key(&a[0])?;
            let f = field(&k, &a[1])?;
            Cmd::Data(DataCmd::HIncrBy(k, f, int_arg(&a[2])?))
        }
        "HGETALL" => {
            need(a.len() == 1)?;
            Cmd::Data(DataCmd::HGetAll(key(&a[0])?))
        }
        "HEXISTS" => {
            need(a.len() == 2)?;
            let k = key(&a[0])?;
            let f = field(&k, &a[1])?;
            Cmd::Data(DataCmd::HExists(k, f))
        }
        "FLUSHALL" | "FLUSHDB" => Cmd::Data(DataCmd::FlushAll),
        "PING" => {
            need(a.len() <= 1)?;
            Cmd::Ping(a.first().cloned())
        }
        "ECHO" => {
            need(a.len() == 1)?;
            Cmd::Echo(a[0].clone())
        }
        "WATCH" => {
            need(!a.is_empty())?;
            Cmd::Watch(a.iter().map(|k| key(k)).collect::<std::result::Result<_, _>>()?)
        }
        "UNWATCH" => Cmd::Unwatch,
        "MULTI" => Cmd::Multi,
        "EXEC" => Cmd::Exec,
        "DISCARD" => Cmd::Discard,
        "QUIT" => Cmd::Quit,
        "SELECT" | "CLIENT" => Cmd::Noop,
        "COMMAND" => Cmd::EmptyArray,
        _ => {
            let shown: Vec<String> = a
                .iter()
                .take(3)
                .map(|x| format!("'{}'", String::from_utf8_lossy(x)))
                .collect();
            return Err(err(format!(
                "ERR unknown command '{}', with args beginning with: {}",
                String::from_utf8_lossy(&args[0]),
                shown.join(" ")
            )));
        }
    };
    Ok(cmd)
}

impl DataCmd {
    fn footprint(&self, cells: &CellMap) -> Footprint {
        match self {
            DataCmd::Get(k) | DataCmd::Set(k, _) | DataCmd::IncrBy(k, _) => {
                Footprint::Shards(vec![cells.shard_of(k)])
            }
            DataCmd::HGet(k, f) | DataCmd::HIncrBy(k, f, _) | DataCmd::HExists(k, f) => {
                Footprint::Shards(vec![cells.shard_of(k), cells.shard_of(f)])
            }
            DataCmd::HSet(k, pairs) => {
                let mut fp = Footprint::Shards(vec![cells.shard_of(k)]);
                pairs.iter().for_each(|(f, _)| fp.add(cells.shard_of(f)));
                fp
            }
            DataCmd::HDel(k, fs) => {
                let mut fp = Footprint::Shards(vec![cells.shard_of(k)]);
                fs.iter().for_each(|f| fp.add(cells.shard_of(f)));
                fp
            }
            DataCmd::Del(_)
            | DataCmd::Exists(_)
            | DataCmd::HLen(_)
            | DataCmd::HGetAll(_)
            | DataCmd::FlushAll => Footprint::All,
        }
    }

    fn apply(&self, cells: &mut LockedCells<'_>) -> RespFrame {
        match self {
            DataCmd::Get(k) => RespFrame::Bulk(cells.get(k).map(<[u8]>::to_vec)),
            DataCmd::Set(k, v) => {
                cells.put(k, Some(v));
                RespFrame::ok()
            }
            DataCmd::IncrBy(k, d) => match add_checked(cells.get(k), *d, k) {
                Ok(n) => {
                    cells.put(k, Some(n.to_string().as_bytes()));
                    RespFrame::Integer(n)
                }
                Err(crate::Error::IncrementOverflow { .. }) => {
                    err("ERR increment or decrement would overflow")
                }
                Err(_) => err(WRONG_INT),
            },
            DataCmd::Del(keys) => {
                let mut n = 0;
                for k in keys {
                    if cells.delete_tree(k) {
                        cells.touch(k);
                        n += 1;
                    }
                }
                RespFrame::Integer(n)
            }
            DataCmd::Exists(keys) => RespFrame::Integer(keys.iter().filter(|k| cells.exists(k)).count() as i64),
            DataCmd::HGet(_, f) => RespFrame::Bulk(cells.get(f).map(<[u8]>::to_vec)),
            DataCmd::HSet(k, pairs) => {
                let mut added = 0;
                for (f, v) in pairs {
                    if cells.get(f).is_none() {
                        added += 1;
                    }
                    cells.put(f, Some(v));
                }
                cells.touch(k);
                RespFrame::Integer(added)
            }
            DataCmd::HDel(k, fs) => {
                let mut removed = 0;
                for f in fs {
                    if cells.get(f).is_some() {
                        cells.put(f, None);
                        removed += 1;
                    }
                }
                if removed > 0 {
                    cells.touch(k);
                }
                RespFrame::Integer(removed)
            }
            DataCmd::HLen(k) => RespFrame::Integer(cells.subtree_size(k) as i64),
            DataCmd::HIncrBy(k, f, d) => match add_checked(cells.get(f), *d, f) {
                Ok(n) => {
                    cells.put(f, Some(n.to_string().as_bytes()));
                    cells.touch(k);
                    RespFrame::Integer(n)
                }
                Err(crate::Error::IncrementOverflow { .. }) => {
                    err("ERR increment or decrement would overflow")
                }
                Err(_) => err("ERR hash value is not an integer"),
            },
            DataCmd::HGetAll(k) => RespFrame::Array(Some(
                cells
                    .children(k)
                    .into_iter()
                    .flat_map(|(f, v)| [RespFrame::bulk(f), RespFrame::bulk(v)])
                    .collect(),
            )),
            DataCmd::HExists(_, f) => RespFrame::Integer(cells.get(f).is_some() as i64),
            DataCmd::FlushAll => {
                cells.clear_values();
                RespFrame::ok()
            }
        }
    }
}

/// Per-connection state.
struct Conn {
    store: EmbeddedStore,
    watched: Vec<(NodeHandle, u64)>,
    watch_epoch: u64,
    queue: Option<Vec<DataCmd>>,
    queue_failed: bool,
}

impl Conn {
    fn cells(&self) -> &CellMap {
        self.store.cells()
    }

    fn run_data(&self, cmd: &DataCmd) -> RespFrame {
        let mut locked = self.cells().lock(cmd.footprint(self.cells()));
        cmd.apply(&mut locked)
    }

    fn exec(&mut self) -> RespFrame {
        let Some(queue) = self.queue.take() else {
            return err("ERR EXEC without MULTI");
        };
        let watched = std::mem::take(&mut self.watched);
        if std::mem::take(&mut self.queue_failed) {
            return err("EXECABORT Transaction discarded because of previous errors.");
        }
        let cells = self.store.cells();
        let mut fp = Footprint::none();
        watched.iter().for_each(|(k, _)| fp.add(cells.shard_of(k)));
        queue.iter().for_each(|c| fp.merge(c.footprint(cells)));
        let mut locked = cells.lock(fp);
        if !watched.is_empty()
            && (locked.epoch() != self.watch_epoch || watched.iter().any(|(k, v)| locked.version(k) != *v))
        {
            return RespFrame::Array(None);
        }
        RespFrame::Array(Some(queue.iter().map(|c| c.apply(&mut locked)).collect()))
    }

    /// Handles one command. Returns the reply and whether to close afterwards.
    fn handle(&mut self, args: &[Vec<u8>]) -> (RespFrame, bool) {
        let cmd = match parse(args) {
            Ok(c) => c,
            Err(e) => {
                if self.queue.is_some() {
                    self.queue_failed = true;
                }
                return (e, false);
            }
        };
        if let Some(q) = self.queue.as_mut() {
            match cmd {
                Cmd::Data(d) => {
                    q.push(d);
                    return (RespFrame::Simple(b"QUEUED".to_vec()), false);
                }
                Cmd::Ping(_) | Cmd::Echo(_) | Cmd::Noop | Cmd::EmptyArray => {
                    self.queue_failed = true;
                    return (err("ERR command not supported inside MULTI"), false);
                }
                Cmd::Watch(_) => return (err("ERR WATCH inside MULTI is not allowed"), false),
                Cmd::Multi => return (err("ERR MULTI calls can not be nested"), false),
                _ => {}
            }
        }
        let reply = match cmd {
            Cmd::Data(d) => self.run_data(&d),
            Cmd::Ping(None) => RespFrame::Simple(b"PONG".to_vec()),
            Cmd::Ping(Some(m)) | Cmd::Echo(m) => RespFrame::bulk(m),
            Cmd::Watch(keys) => {
                if self.watched.is_empty() {
                    self.watch_epoch = self.cells().epoch();
                }
                for k in keys {
                    let (_, v) = self.cells().read(&k);
                    self.watched.push((k, v));
                }
                RespFrame::ok()
            }
            Cmd::Unwatch => {
                self.watched.clear();
                RespFrame::ok()
            }
            Cmd::Multi => {
                self.queue = Some(Vec::new());
                RespFrame::ok()
            }
            Cmd::Exec => self.exec(),
            Cmd::Discard => {
                if self.queue.take().is_none() {
                    err("ERR DISCARD without MULTI")
                } else {
                    self.watched.clear();
                    self.queue_failed = false;
                    RespFrame::ok()
                }
            }
            Cmd::Quit => return (RespFrame::ok(), true),
            Cmd::Noop => RespFrame::ok(),
            Cmd::EmptyArray => RespFrame::Array(Some(Vec::new())),
        };
        (reply, false)
    }
}

/// Decodes one command: a RESP array of bulk strings, or an inline
/// whitespace-separated line.
fn decode_command(buf: &[u8]) -> std::result::Result<Option<(Vec<Vec<u8>>, usize)>, ProtocolError> {
    if buf.first() == Some(&b'*') {
        let Some((frame, used)) = decode_frame(buf)? else { return Ok(None) };
        let RespFrame::Array(Some(items)) = frame else { return Err(ProtocolError::NotACommand) };
        let args = items
            .into_iter()
            .map(|i| match i {
                RespFrame::Bulk(Some(b)) => Ok(b),
                _ => Err(ProtocolError::NotACommand),
            })
            .collect::<std::result::Result<_, _>>()?;
        return Ok(Some((args, used)));
    }
    // inline command; accept a bare LF as well
    if let Some(nl) = buf.iter().position(|&b| b == b'\n') {
        let line = buf[..nl].strip_suffix(b"\r").unwrap_or(&buf[..nl]);
        let args = line
            .split(|b| b.is_ascii_whitespace())
            .filter(|s| !s.is_empty())
            .map(<[u8]>::to_vec)
            .collect();
        return Ok(Some((args, nl + 1)));
    }
    // surface over-long inline garbage instead of buffering forever
    read_line(buf, 0).map(|_| None)
}

fn serve_connection(mut stream: TcpStream, store: EmbeddedStore) -> io::Result<()> {
    stream.set_nodelay(true)?;
    let mut conn = Conn { store, watched: Vec::new(), watch_epoch: 0, queue: None, queue_failed: false };
    let mut rbuf: Vec<u8> = Vec::with_capacity(16 * 1024);
    let mut out = Vec::with_capacity(1024);
    let mut chunk = vec![0u8; 16 * 1024];
    loop {
        let n = stream.read(&mut chunk)?;
        if n == 0 {
            return Ok(());
        }
        rbuf.extend_from_slice(&chunk[..n]);
        let mut pos = 0;
        let mut close = false;
        loop {
            match decode_command(&rbuf[pos..]) {
                Ok(Some((args, used))) => {
                    pos += used;
                    if args.is_empty() && rbuf[pos - used] != b'*' {
                        continue; // blank inline line
                    }
                    let (reply, quit) = conn.handle(&args);
                    // payloads we build never contain CR/LF outside bulk strings
                    let _ = encode_into(&reply, &mut out);
                    if quit {
                        close = true;
                        break;
                    }
                }
                Ok(None) => break,
                Err(e) => {
                    let _ = encode_into(&err(format!("ERR Protocol error: {e}")), &mut out);
                    close = true;
                    break;
                }
            }
        }
        rbuf.drain(..pos);
        if !out.is_empty() {
            stream.write_all(&out)?;
            out.clear();
        }
        if close {
            return Ok(());
        }
    }
}

/// A bound RESP server.
pub struct RespServer {
    listener: TcpListener,
    store: EmbeddedStore,
    shutdown: Arc<AtomicBool>,
}

impl RespServer {
    pub fn bind(addr: impl ToSocketAddrs, store: EmbeddedStore) -> Result<Self> {
        Ok(RespServer { listener: TcpListener::bind(addr)?, store, shutdown: Arc::new(AtomicBool::new(false)) })
    }

    pub fn local_addr(&self) -> Result<SocketAddr> {
        Ok(self.listener.local_addr()?)
    }

    /// Accepts connections until shut down, one thread per connection.
    pub fn serve(self) -> Result<()> {
        for stream in self.listener.incoming() {
            if self.shutdown.load(Ordering::Acquire) {
                break;
            }
            let Ok(stream) = stream else { continue };
            let store = self.store.clone();
            thread::spawn(move || {
                let _ = serve_connection(stream, store);
            });
        }
        Ok(())
    }

    /// Serves on a background thread.
    pub fn spawn(self) -> Result<ServerHandle> {
        let addr = self.local_addr()?;
        let shutdown = self.shutdown.clone();
        let thread = thread::spawn(move || self.serve());
        Ok(ServerHandle { addr, shutdown, thread: Some(thread) })
    }
}

/// Running background server; stops accepting when dropped.
pub struct ServerHandle {
    addr: SocketAddr,
    shutdown: Arc<AtomicBool>,
    thread: Option<JoinHandle<Result<()>>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        if let Some(t) = self.thread.take() {
            self.shutdown.store(true, Ordering::Release);
            // wake the accept loop
            let _ = TcpStream::connect(self.addr);
            let _ = t.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.stop();
    }
}
