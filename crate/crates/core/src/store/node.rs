//! Node paths and handles.
//!
//! A node is a variable name plus an ordered list of subscripts, M-style:
//! `step("27")`, `blocks("3","taken")`. A [`NodeHandle`] builds the encoded
//! form of its path exactly once, when it is created, so every later store
//! call through the handle reuses the same buffer.
//!
//! The encoding escapes each segment (`0x00` becomes `0x00 0xFF`) and ends it
//! with `0x00 0x01`. The result is self-delimiting and order preserving, so:
//!
//! * a node's encoding is a byte prefix of every descendant's encoding, and
//! * comparing two encodings bytewise compares the paths segment by segment.

use std::borrow::Cow;
use std::fmt;
use std::time::Duration;

use crate::error::{Error, Result};
use crate::store::{parse_u64, Store};

/// Largest subscript accepted, in bytes.
pub const MAX_SUBSCRIPT_LEN: usize = 1 << 20;
/// Largest value accepted by `set`, in bytes.
pub const MAX_VALUE_LEN: usize = 1 << 20;

const ESCAPE: u8 = 0x00;
const ESCAPED_NUL: u8 = 0xFF;
const TERMINATOR: u8 = 0x01;

/// Anything usable as a subscript.
///
/// Integers are canonicalized to their shortest decimal string, so `27u64`
/// and `"27"` name the same node.
pub trait Subscript {
    fn to_subscript(&self) -> Cow<'_, [u8]>;
}

impl Subscript for [u8] {
    fn to_subscript(&self) -> Cow<'_, [u8]> {
        Cow::Borrowed(self)
    }
}

impl Subscript for Vec<u8> {
    fn to_subscript(&self) -> Cow<'_, [u8]> {
        Cow::Borrowed(self)
    }
}

impl Subscript for str {
    fn to_subscript(&self) -> Cow<'_, [u8]> {
        Cow::Borrowed(self.as_bytes())
    }
}

impl Subscript for String {
    fn to_subscript(&self) -> Cow<'_, [u8]> {
        Cow::Borrowed(self.as_bytes())
    }
}

impl<T: Subscript + ?Sized> Subscript for &T {
    fn to_subscript(&self) -> Cow<'_, [u8]> {
        (**self).to_subscript()
    }
}

macro_rules! numeric_subscript {
    ($($t:ty),*) => {$(
        impl Subscript for $t {
            fn to_subscript(&self) -> Cow<'_, [u8]> {
                Cow::Owned(self.to_string().into_bytes())
            }
        }
    )*};
}

numeric_subscript!(u8, u16, u32, u64, usize, i8, i16, i32, i64, isize);

/// Owned, comparable form of a node path.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Key {
    pub varname: Vec<u8>,
    pub subscripts: Vec<Vec<u8>>,
}

impl Key {
    pub fn handle(&self) -> Result<NodeHandle> {
        NodeHandle::new(&self.varname, &self.subscripts)
    }
}

/// An immutable node path with its encoding prebuilt.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct NodeHandle {
    // varname followed by every subscript, back to back
    raw: Box<[u8]>,
    // end offset in `raw` of each segment; ends[0] closes the varname
    ends: Box<[u32]>,
    encoded: Box<[u8]>,
    // bytes of `encoded` covering varname and the first subscript
    shard_prefix: u32,
    shard_hash: u64,
}

fn encoded_len(segment: &[u8]) -> usize {
    segment.len() + segment.iter().filter(|&&b| b == ESCAPE).count() + 2
}

fn encode_into(buf: &mut Vec<u8>, segment: &[u8]) {
    for &b in segment {
        buf.push(b);
        if b == ESCAPE {
            buf.push(ESCAPED_NUL);
        }
    }
    buf.push(ESCAPE);
    buf.push(TERMINATOR);
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

fn check_subscript(s: &[u8]) -> Result<()> {
    if s.len() > MAX_SUBSCRIPT_LEN {
        return Err(Error::SubscriptTooLarge(s.len()));
    }
    Ok(())
}

impl NodeHandle {
    /// Handle for `varname(subscripts...)`.
    pub fn new<I>(varname: impl AsRef<[u8]>, subscripts: I) -> Result<Self>
    where
        I: IntoIterator,
        I::Item: Subscript,
    {
        let varname = varname.as_ref();
        if varname.is_empty() {
            return Err(Error::EmptyVarname);
        }
        check_subscript(varname)?;
        let subs: Vec<I::Item> = subscripts.into_iter().collect();
        let subs: Vec<Cow<'_, [u8]>> = subs.iter().map(|s| s.to_subscript()).collect();
        for s in &subs {
            check_subscript(s)?;
        }

        // lengths are known up front: size both buffers once
        let raw_len = varname.len() + subs.iter().map(|s| s.len()).sum::<usize>();
        let enc_len = encoded_len(varname) + subs.iter().map(|s| encoded_len(s)).sum::<usize>();
        let mut raw = Vec::with_capacity(raw_len);
        let mut encoded = Vec::with_capacity(enc_len);
        let mut ends = Vec::with_capacity(subs.len() + 1);

        raw.extend_from_slice(varname);
        encode_into(&mut encoded, varname);
        ends.push(raw.len() as u32);
        let mut shard_prefix = encoded.len();
        for (i, s) in subs.iter().enumerate() {
            raw.extend_from_slice(s);
            encode_into(&mut encoded, s);
            ends.push(raw.len() as u32);
            if i == 0 {
                shard_prefix = encoded.len();
            }
        }
        Ok(Self::from_parts(raw, ends, encoded, shard_prefix))
    }

    /// Handle for the bare variable `varname`.
    pub fn root(varname: impl AsRef<[u8]>) -> Result<Self> {
        Self::new(varname, std::iter::empty::<&[u8]>())
    }

    fn from_parts(raw: Vec<u8>, ends: Vec<u32>, encoded: Vec<u8>, shard_prefix: usize) -> Self {
        let shard_hash = fnv1a(&encoded[..shard_prefix]);
        NodeHandle {
            raw: raw.into_boxed_slice(),
            ends: ends.into_boxed_slice(),
            encoded: encoded.into_boxed_slice(),
            shard_prefix: shard_prefix as u32,
            shard_hash,
        }
    }

    /// New handle with `subscript` appended. The parent's encoded bytes are
    /// copied, not rebuilt.
    pub fn child(&self, subscript: impl Subscript) -> Result<Self> {
        let sub = subscript.to_subscript();
        check_subscript(&sub)?;
        let mut raw = Vec::with_capacity(self.raw.len() + sub.len());
        raw.extend_from_slice(&self.raw);
        raw.extend_from_slice(&sub);
        let mut encoded = Vec::with_capacity(self.encoded.len() + encoded_len(&sub));
        encoded.extend_from_slice(&self.encoded);
        encode_into(&mut encoded, &sub);
        let mut ends = Vec::with_capacity(self.ends.len() + 1);
        ends.extend_from_slice(&self.ends);
        ends.push(raw.len() as u32);
        let shard_prefix = if self.ends.len() == 1 {
            encoded.len()
        } else {
            self.shard_prefix as usize
        };
        Ok(Self::from_parts(raw, ends, encoded, shard_prefix))
    }

    pub fn varname(&self) -> &[u8] {
        &self.raw[..self.ends[0] as usize]
    }

    pub fn subscript_count(&self) -> usize {
        self.ends.len() - 1
    }

    pub fn subscript(&self, i: usize) -> Option<&[u8]> {
        if i + 1 >= self.ends.len() {
            return None;
        }
        Some(&self.raw[self.ends[i] as usize..self.ends[i + 1] as usize])
    }

    pub fn subscripts(&self) -> impl Iterator<Item = &[u8]> + '_ {
        self.ends
            .windows(2)
            .map(move |w| &self.raw[w[0] as usize..w[1] as usize])
    }

    pub fn key(&self) -> Key {
        Key {
            varname: self.varname().to_vec(),
            subscripts: self.subscripts().map(<[u8]>::to_vec).collect(),
        }
    }

    /// The order-preserving path encoding used as the embedded store's cell key.
    pub fn encoded(&self) -> &[u8] {
        &self.encoded
    }

    /// Hash of the varname and first subscript; picks the embedded store shard.
    pub(crate) fn shard_hash(&self) -> u64 {
        self.shard_hash
    }

    /// True if `self` is `other` or one of its ancestors.
    pub fn is_prefix_of(&self, other: &NodeHandle) -> bool {
        other.encoded.starts_with(&self.encoded)
    }

    pub fn metered(&self, counters: &super::AccessCounters) -> super::MeteredNode {
        super::MeteredNode::new(self.clone(), counters.clone())
    }

    pub fn get<S: Store + ?Sized>(&self, store: &mut S) -> Result<Option<Vec<u8>>> {
        store.get(self)
    }

    pub fn get_or<S: Store + ?Sized>(&self, store: &mut S, default: &[u8]) -> Result<Vec<u8>> {
        Ok(store.get(self)?.unwrap_or_else(|| default.to_vec()))
    }

    /// Reads the node as a decimal integer, `default` when absent.
    pub fn get_u64_or<S: Store + ?Sized>(&self, store: &mut S, default: u64) -> Result<u64> {
        match store.get(self)? {
            Some(v) => parse_u64(&v, self),
            None => Ok(default),
        }
    }

    pub fn set<S: Store + ?Sized>(&self, store: &mut S, value: impl AsRef<[u8]>) -> Result<()> {
        store.set(self, value.as_ref())
    }

    pub fn incr<S: Store + ?Sized>(&self, store: &mut S, delta: i64) -> Result<i64> {
        store.incr(self, delta)
    }

    pub fn delete_tree<S: Store + ?Sized>(&self, store: &mut S) -> Result<()> {
        store.delete_tree(self)
    }

    pub fn set_tree<S, K, V>(&self, store: &mut S, entries: impl IntoIterator<Item = (K, V)>) -> Result<()>
    where
        S: Store + ?Sized,
        K: Subscript,
        V: AsRef<[u8]>,
    {
        let entries: Vec<(Vec<u8>, Vec<u8>)> = entries
            .into_iter()
            .map(|(k, v)| (k.to_subscript().into_owned(), v.as_ref().to_vec()))
            .collect();
        store.set_tree(self, &entries)
    }

    pub fn subtree_size<S: Store + ?Sized>(&self, store: &mut S) -> Result<u64> {
        store.subtree_size(self)
    }

    pub fn grab<S: Store + ?Sized>(&self, store: &mut S, timeout: Option<Duration>) -> Result<bool> {
        store.grab(self, timeout)
    }

    pub fn release<S: Store + ?Sized>(&self, store: &mut S) -> Result<()> {
        store.release(self)
    }
}

impl fmt::Display for NodeHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", String::from_utf8_lossy(self.varname()))?;
        if self.subscript_count() > 0 {
            f.write_str("(")?;
            for (i, s) in self.subscripts().enumerate() {
                if i > 0 {
                    f.write_str(",")?;
                }
                write!(f, "{:?}", String::from_utf8_lossy(s))?;
            }
            f.write_str(")")?;
        }
        Ok(())
    }
}

impl fmt::Debug for NodeHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "NodeHandle({self})")
    }
}

/// Decodes one segment starting at `pos` of an encoded path. Returns the
/// segment bytes and the position just past its terminator.
pub(crate) fn decode_segment(encoded: &[u8], mut pos: usize) -> Option<(Vec<u8>, usize)> {
    let mut out = Vec::new();
    while pos < encoded.len() {
        let b = encoded[pos];
        if b == ESCAPE {
            match encoded.get(pos + 1)? {
                &ESCAPED_NUL => out.push(ESCAPE),
                &TERMINATOR => return Some((out, pos + 2)),
                _ => return None,
            }
            pos += 2;
        } else {
            out.push(b);
            pos += 1;
        }
    }
    None
}
