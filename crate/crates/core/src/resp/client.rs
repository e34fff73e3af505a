//! Blocking RESP2 client and the store backend built on it.
//!
//! One request is in flight per connection at a time. Nodes map to Redis
//! keys as follows: a bare node `k` is the string key `k`; a subscripted
//! node `k(s1,..,sn)` is field `s1-..-sn` of hash `k`. With one subscript
//! that is the plain hash field, and the block-claim marker
//! `blocks(i,"taken")` becomes field `i-taken`.

use std::borrow::Cow;
use std::collections::HashMap;
use std::io::{Read, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::thread;

use rand::Rng;

use super::frame::{decode_frame, encode_command, RespFrame};
use crate::error::{Error, Result};
use crate::store::{add_checked, check_value, NodeHandle, Store, TxnBody, WatchMulti};

const READ_CHUNK: usize = 16 * 1024;

/// A single connection speaking strict request/response.
pub struct ClientConnection {
    stream: TcpStream,
    rbuf: Vec<u8>,
    rpos: usize,
    wbuf: Vec<u8>,
}

impl ClientConnection {
    pub fn connect(addr: impl ToSocketAddrs) -> Result<Self> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        Ok(ClientConnection { stream, rbuf: Vec::with_capacity(READ_CHUNK), rpos: 0, wbuf: Vec::new() })
    }

    /// Sends one command and returns the reply. Error replies are returned
    /// as `RespFrame::Error`, not as `Err`.
    pub fn call(&mut self, args: &[&[u8]]) -> Result<RespFrame> {
        self.wbuf.clear();
        encode_command(args, &mut self.wbuf);
        self.stream.write_all(&self.wbuf)?;
        self.read_reply()
    }

    /// Like [`call`](Self::call) but turns error replies into `Err`.
    pub fn call_ok(&mut self, args: &[&[u8]]) -> Result<RespFrame> {
        match self.call(args)? {
            RespFrame::Error(e) => Err(Error::Server(String::from_utf8_lossy(&e).into_owned())),
            f => Ok(f),
        }
    }

    fn read_reply(&mut self) -> Result<RespFrame> {
        loop {
            if let Some((frame, used)) = decode_frame(&self.rbuf[self.rpos..])? {
                self.rpos += used;
                if self.rpos == self.rbuf.len() {
                    self.rbuf.clear();
                    self.rpos = 0;
                }
                return Ok(frame);
            }
            if self.rpos > 0 {
                self.rbuf.drain(..self.rpos);
                self.rpos = 0;
            }
            let len = self.rbuf.len();
            self.rbuf.resize(len + READ_CHUNK, 0);
            let n = self.stream.read(&mut self.rbuf[len..])?;
            self.rbuf.truncate(len + n);
            if n == 0 {
                return Err(Error::Io(std::io::ErrorKind::UnexpectedEof.into()));
            }
        }
    }
}

fn unexpected(command: &[u8], reply: &RespFrame) -> Error {
    Error::UnexpectedReply {
        command: String::from_utf8_lossy(command).into_owned(),
        reply: reply.to_string(),
    }
}

/// Redis key and optional hash field for a node.
pub fn redis_address(node: &NodeHandle) -> (&[u8], Option<Cow<'_, [u8]>>) {
    let field = match node.subscript_count() {
        0 => None,
        1 => node.subscript(0).map(Cow::Borrowed),
        _ => Some(Cow::Owned(node.subscripts().collect::<Vec<_>>().join(&b'-'))),
    };
    (node.varname(), field)
}

/// [`Store`] over a RESP2 connection.
pub struct RespStore {
    conn: ClientConnection,
    in_multi: bool,
    retry_limit: u32,
}

impl RespStore {
    pub fn connect(addr: impl ToSocketAddrs) -> Result<Self> {
        Ok(RespStore {
            conn: ClientConnection::connect(addr)?,
            in_multi: false,
            retry_limit: crate::embedded::DEFAULT_RETRY_LIMIT,
        })
    }

    pub fn with_retry_limit(mut self, limit: u32) -> Self {
        self.retry_limit = limit.max(1);
        self
    }

    pub fn connection(&mut self) -> &mut ClientConnection {
        &mut self.conn
    }

    pub fn ping(&mut self) -> Result<()> {
        match self.conn.call_ok(&[b"PING"])? {
            RespFrame::Simple(s) if s == b"PONG" => Ok(()),
            other => Err(unexpected(b"PING", &other)),
        }
    }

    pub fn flush_all(&mut self) -> Result<()> {
        self.conn.call_ok(&[b"FLUSHALL"]).map(drop)
    }

    fn write_reply(&mut self, cmd: &[u8], reply: RespFrame) -> Result<()> {
        match reply {
            RespFrame::Simple(s) if self.in_multi && s == b"QUEUED" => Ok(()),
            RespFrame::Simple(s) if !self.in_multi && s == b"OK" => Ok(()),
            RespFrame::Integer(_) if !self.in_multi => Ok(()),
            other => Err(unexpected(cmd, &other)),
        }
    }

    fn not_queued(&self, what: &'static str) -> Result<()> {
        if self.in_multi {
            return Err(Error::InvalidState(what));
        }
        Ok(())
    }
}

fn bulk_reply(cmd: &[u8], reply: RespFrame) -> Result<Option<Vec<u8>>> {
    match reply {
        RespFrame::Bulk(v) => Ok(v),
        other => Err(unexpected(cmd, &other)),
    }
}

fn int_reply(cmd: &[u8], reply: RespFrame) -> Result<i64> {
    match reply {
        RespFrame::Integer(i) => Ok(i),
        other => Err(unexpected(cmd, &other)),
    }
}

impl Store for RespStore {
    fn get(&mut self, node: &NodeHandle) -> Result<Option<Vec<u8>>> {
        self.not_queued("get cannot be queued inside MULTI")?;
        match redis_address(node) {
            (key, None) => bulk_reply(b"GET", self.conn.call_ok(&[b"GET", key])?),
            (key, Some(f)) => bulk_reply(b"HGET", self.conn.call_ok(&[b"HGET", key, &f])?),
        }
    }

    fn set(&mut self, node: &NodeHandle, value: &[u8]) -> Result<()> {
        check_value(value)?;
        match redis_address(node) {
            (key, None) => {
                let r = self.conn.call_ok(&[b"SET", key, value])?;
                self.write_reply(b"SET", r)
            }
            (key, Some(f)) => {
                let r = self.conn.call_ok(&[b"HSET", key, &f, value])?;
                self.write_reply(b"HSET", r)
            }
        }
    }

    fn incr(&mut self, node: &NodeHandle, delta: i64) -> Result<i64> {
        self.not_queued("incr cannot be queued inside MULTI")?;
        let d = delta.to_string();
        let (cmd, reply) = match redis_address(node) {
            (key, None) => (&b"INCRBY"[..], self.conn.call(&[b"INCRBY", key, d.as_bytes()])?),
            (key, Some(f)) => (&b"HINCRBY"[..], self.conn.call(&[b"HINCRBY", key, &f, d.as_bytes()])?),
        };
        match reply {
            RespFrame::Error(e) if e.windows(11).any(|w| w == b"not an inte") => {
                Err(Error::NotAnInteger { node: node.to_string() })
            }
            RespFrame::Error(e) if e.windows(8).any(|w| w == b"overflow") => {
                Err(Error::IncrementOverflow { node: node.to_string() })
            }
            RespFrame::Error(e) => Err(Error::Server(String::from_utf8_lossy(&e).into_owned())),
            r => int_reply(cmd, r),
        }
    }

    fn delete_tree(&mut self, node: &NodeHandle) -> Result<()> {
        match redis_address(node) {
            (key, None) => {
                let r = self.conn.call_ok(&[b"DEL", key])?;
                self.write_reply(b"DEL", r)
            }
            (key, Some(f)) => {
                let r = self.conn.call_ok(&[b"HDEL", key, &f])?;
                self.write_reply(b"HDEL", r)
            }
        }
    }

    fn set_tree(&mut self, node: &NodeHandle, entries: &[(Vec<u8>, Vec<u8>)]) -> Result<()> {
        if entries.is_empty() {
            return Ok(());
        }
        if node.subscript_count() > 0 {
            for (k, v) in entries {
                self.set(&node.child(k.as_slice())?, v)?;
            }
            return Ok(());
        }
        let mut args: Vec<&[u8]> = vec![b"HSET", node.varname()];
        for (k, v) in entries {
            check_value(v)?;
            args.push(k);
            args.push(v);
        }
        let r = self.conn.call_ok(&args)?;
        self.write_reply(b"HSET", r)
    }

    fn subtree_size(&mut self, node: &NodeHandle) -> Result<u64> {
        self.not_queued("subtree_size cannot be queued inside MULTI")?;
        if node.subscript_count() > 0 {
            return Err(Error::Unsupported("subtree_size below the first level over RESP"));
        }
        Ok(int_reply(b"HLEN", self.conn.call_ok(&[b"HLEN", node.varname()])?)? as u64)
    }

    fn exists(&mut self, node: &NodeHandle) -> Result<bool> {
        self.not_queued("exists cannot be queued inside MULTI")?;
        let n = match redis_address(node) {
            (key, None) => int_reply(b"EXISTS", self.conn.call_ok(&[b"EXISTS", key])?)?,
            (key, Some(f)) => int_reply(b"HEXISTS", self.conn.call_ok(&[b"HEXISTS", key, &f])?)?,
        };
        Ok(n > 0)
    }

    fn children(&mut self, node: &NodeHandle) -> Result<Vec<(Vec<u8>, Vec<u8>)>> {
        self.not_queued("children cannot be queued inside MULTI")?;
        if node.subscript_count() > 0 {
            return Err(Error::Unsupported("children below the first level over RESP"));
        }
        let reply = self.conn.call_ok(&[b"HGETALL", node.varname()])?;
        let RespFrame::Array(Some(items)) = reply else {
            return Err(unexpected(b"HGETALL", &reply));
        };
        let mut out = Vec::with_capacity(items.len() / 2);
        let mut it = items.into_iter();
        while let (Some(k), Some(v)) = (it.next(), it.next()) {
            match (k, v) {
                (RespFrame::Bulk(Some(k)), RespFrame::Bulk(Some(v))) => out.push((k, v)),
                (k, _) => return Err(unexpected(b"HGETALL", &k)),
            }
        }
        out.sort();
        Ok(out)
    }

    fn run_transaction(&mut self, body: &mut TxnBody<'_>) -> Result<u32> {
        self.not_queued("transaction inside MULTI")?;
        let mut rng = None;
        for attempt in 1..=self.retry_limit {
            if attempt > 4 {
                let rng = rng.get_or_insert_with(rand::rng);
                for _ in 0..rng.random_range(1..=(attempt - 4).min(32)) {
                    thread::yield_now();
                }
            }
            let mut view = RespTxn { store: self, watched: Vec::new(), writes: Vec::new(), index: HashMap::new() };
            if let Err(e) = body(&mut view) {
                let watching = !view.watched.is_empty();
                if watching {
                    let _ = self.conn.call(&[b"UNWATCH"]);
                }
                return Err(e);
            }
            if view.commit()? {
                return Ok(attempt);
            }
        }
        Err(Error::RetryLimit(self.retry_limit))
    }
}

impl WatchMulti for RespStore {
    fn watch(&mut self, nodes: &[&NodeHandle]) -> Result<()> {
        let mut args: Vec<&[u8]> = vec![b"WATCH"];
        args.extend(nodes.iter().map(|n| n.varname()));
        self.conn.call_ok(&args).map(drop)
    }

    fn unwatch(&mut self) -> Result<()> {
        self.conn.call_ok(&[b"UNWATCH"]).map(drop)
    }

    fn multi(&mut self) -> Result<()> {
        self.conn.call_ok(&[b"MULTI"])?;
        self.in_multi = true;
        Ok(())
    }

    fn exec(&mut self) -> Result<bool> {
        self.in_multi = false;
        match self.conn.call_ok(&[b"EXEC"])? {
            RespFrame::Array(None) => Ok(false),
            RespFrame::Array(Some(results)) => match results.into_iter().find(RespFrame::is_error) {
                Some(RespFrame::Error(e)) => Err(Error::Server(String::from_utf8_lossy(&e).into_owned())),
                _ => Ok(true),
            },
            other => Err(unexpected(b"EXEC", &other)),
        }
    }

    fn discard(&mut self) -> Result<()> {
        self.in_multi = false;
        self.conn.call_ok(&[b"DISCARD"]).map(drop)
    }
}

/// Transaction body view: every read WATCHes its key first, writes are
/// buffered and sent between MULTI and EXEC.
struct RespTxn<'a> {
    store: &'a mut RespStore,
    watched: Vec<Vec<u8>>,
    writes: Vec<(NodeHandle, Vec<u8>)>,
    index: HashMap<NodeHandle, usize>,
}

impl RespTxn<'_> {
    fn commit(self) -> Result<bool> {
        if self.watched.is_empty() && self.writes.is_empty() {
            return Ok(true);
        }
        self.store.multi()?;
        for (node, value) in &self.writes {
            self.store.set(node, value)?;
        }
        self.store.exec()
    }
}

impl Store for RespTxn<'_> {
    fn get(&mut self, node: &NodeHandle) -> Result<Option<Vec<u8>>> {
        if let Some(&i) = self.index.get(node) {
            return Ok(Some(self.writes[i].1.clone()));
        }
        let key = node.varname();
        if !self.watched.iter().any(|k| k == key) {
            self.store.conn.call_ok(&[b"WATCH", key])?;
            self.watched.push(key.to_vec());
        }
        self.store.get(node)
    }

    fn set(&mut self, node: &NodeHandle, value: &[u8]) -> Result<()> {
        check_value(value)?;
        match self.index.get(node) {
            Some(&i) => self.writes[i].1 = value.to_vec(),
            None => {
                self.index.insert(node.clone(), self.writes.len());
                self.writes.push((node.clone(), value.to_vec()));
            }
        }
        Ok(())
    }

    fn incr(&mut self, node: &NodeHandle, delta: i64) -> Result<i64> {
        let current = self.get(node)?;
        let next = add_checked(current.as_deref(), delta, node)?;
        self.set(node, next.to_string().as_bytes())?;
        Ok(next)
    }

    fn delete_tree(&mut self, _node: &NodeHandle) -> Result<()> {
        Err(Error::Unsupported("delete_tree inside a transaction"))
    }

    fn subtree_size(&mut self, _node: &NodeHandle) -> Result<u64> {
        Err(Error::Unsupported("subtree_size inside a transaction"))
    }

    fn exists(&mut self, _node: &NodeHandle) -> Result<bool> {
        Err(Error::Unsupported("exists inside a transaction"))
    }

    fn children(&mut self, _node: &NodeHandle) -> Result<Vec<(Vec<u8>, Vec<u8>)>> {
        Err(Error::Unsupported("children inside a transaction"))
    }

    fn run_transaction(&mut self, body: &mut TxnBody<'_>) -> Result<u32> {
        body(self)?;
        Ok(1)
    }
}
