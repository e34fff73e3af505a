//! RESP2 frames and an incremental codec.

use std::fmt;

/// Largest bulk string accepted (Redis' default `proto-max-bulk-len`).
pub const MAX_BULK_LEN: usize = 512 * 1024 * 1024;
/// Largest array length accepted.
pub const MAX_ARRAY_LEN: usize = 1 << 24;
/// Longest simple-string, error or header line accepted.
pub const MAX_LINE_LEN: usize = 1 << 20;
/// Deepest array nesting accepted.
pub const MAX_DEPTH: usize = 64;

/// One RESP2 value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RespFrame {
    Simple(Vec<u8>),
    Error(Vec<u8>),
    Integer(i64),
    /// `None` is the null bulk string `$-1`.
    Bulk(Option<Vec<u8>>),
    /// `None` is the null array `*-1`.
    Array(Option<Vec<RespFrame>>),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ProtocolError {
    #[error("invalid frame type byte {0:#04x}")]
    InvalidType(u8),
    #[error("invalid integer or length")]
    InvalidNumber,
    #[error("length {0} exceeds the protocol limit")]
    LengthOverflow(i64),
    #[error("line is not terminated by CRLF")]
    BadLineEnding,
    #[error("line longer than {MAX_LINE_LEN} bytes")]
    LineTooLong,
    #[error("bulk string is not followed by CRLF")]
    BadBulkTerminator,
    #[error("arrays nested deeper than {MAX_DEPTH}")]
    TooDeep,
    #[error("simple string or error payload contains CR or LF")]
    LineBreakInPayload,
    #[error("expected a command array of bulk strings")]
    NotACommand,
}

impl RespFrame {
    pub fn ok() -> Self {
        RespFrame::Simple(b"OK".to_vec())
    }

    pub fn bulk(bytes: impl Into<Vec<u8>>) -> Self {
        RespFrame::Bulk(Some(bytes.into()))
    }

    pub fn error(msg: impl Into<Vec<u8>>) -> Self {
        RespFrame::Error(msg.into())
    }

    pub fn is_error(&self) -> bool {
        matches!(self, RespFrame::Error(_))
    }
}

impl fmt::Display for RespFrame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RespFrame::Simple(s) => write!(f, "+{}", String::from_utf8_lossy(s)),
            RespFrame::Error(s) => write!(f, "-{}", String::from_utf8_lossy(s)),
            RespFrame::Integer(i) => write!(f, ":{i}"),
            RespFrame::Bulk(None) => f.write_str("(nil)"),
            RespFrame::Bulk(Some(b)) => write!(f, "{:?}", String::from_utf8_lossy(b)),
            RespFrame::Array(None) => f.write_str("(nil array)"),
            RespFrame::Array(Some(items)) => {
                f.write_str("[")?;
                for (i, item) in items.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{item}")?;
                }
                f.write_str("]")
            }
        }
    }
}

fn push_decimal(out: &mut Vec<u8>, n: i64) {
    out.extend_from_slice(n.to_string().as_bytes());
}

fn push_line(out: &mut Vec<u8>, kind: u8, payload: &[u8]) -> Result<(), ProtocolError> {
    if payload.iter().any(|&b| b == b'\r' || b == b'\n') {
        return Err(ProtocolError::LineBreakInPayload);
    }
    out.push(kind);
    out.extend_from_slice(payload);
    out.extend_from_slice(b"\r\n");
    Ok(())
}

/// Appends the RESP2 encoding of `frame` to `out`.
pub fn encode_into(frame: &RespFrame, out: &mut Vec<u8>) -> Result<(), ProtocolError> {
    match frame {
        RespFrame::Simple(s) => push_line(out, b'+', s)?,
        RespFrame::Error(s) => push_line(out, b'-', s)?,
        RespFrame::Integer(i) => {
            out.push(b':');
            push_decimal(out, *i);
            out.extend_from_slice(b"\r\n");
        }
        RespFrame::Bulk(None) => out.extend_from_slice(b"$-1\r\n"),
        RespFrame::Bulk(Some(b)) => {
            out.push(b'$');
            push_decimal(out, b.len() as i64);
            out.extend_from_slice(b"\r\n");
            out.extend_from_slice(b);
            out.extend_from_slice(b"\r\n");
        }
        RespFrame::Array(None) => out.extend_from_slice(b"*-1\r\n"),
        RespFrame::Array(Some(items)) => {
            out.push(b'*');
            push_decimal(out, items.len() as i64);
            out.extend_from_slice(b"\r\n");
            for item in items {
                encode_into(item, out)?;
            }
        }
    }
    Ok(())
}

pub fn encode_frame(frame: &RespFrame) -> Result<Vec<u8>, ProtocolError> {
    let mut out = Vec::new();
    encode_into(frame, &mut out)?;
    Ok(out)
}

/// Appends a command (an array of bulk strings) without building frames.
pub fn encode_command(args: &[&[u8]], out: &mut Vec<u8>) {
    out.push(b'*');
    push_decimal(out, args.len() as i64);
    out.extend_from_slice(b"\r\n");
    for a in args {
        out.push(b'$');
        push_decimal(out, a.len() as i64);
        out.extend_from_slice(b"\r\n");
        out.extend_from_slice(a);
        out.extend_from_slice(b"\r\n");
    }
}

/// Finds the CRLF-terminated line starting at `pos`. Returns the line
/// (without CRLF) and the position after the CRLF, or `None` if the line is
/// not complete yet.
pub(crate) fn read_line(buf: &[u8], pos: usize) -> Result<Option<(&[u8], usize)>, ProtocolError> {
    let rest = &buf[pos..];
    for (i, &b) in rest.iter().enumerate() {
        if i > MAX_LINE_LEN {
            return Err(ProtocolError::LineTooLong);
        }
        match b {
            b'\r' => {
                return match rest.get(i + 1) {
                    Some(b'\n') => Ok(Some((&rest[..i], pos + i + 2))),
                    Some(_) => Err(ProtocolError::BadLineEnding),
                    None => Ok(None),
                };
            }
            b'\n' => return Err(ProtocolError::BadLineEnding),
            _ => {}
        }
    }
    if rest.len() > MAX_LINE_LEN {
        return Err(ProtocolError::LineTooLong);
    }
    Ok(None)
}

fn parse_int(line: &[u8]) -> Result<i64, ProtocolError> {
    let digits = line.strip_prefix(b"-").unwrap_or(line);
    if digits.is_empty() || !digits.iter().all(u8::is_ascii_digit) {
        return Err(ProtocolError::InvalidNumber);
    }
    // all ASCII digits, so from_utf8 cannot fail
    std::str::from_utf8(line)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or(ProtocolError::InvalidNumber)
}

fn parse_len(line: &[u8], max: usize) -> Result<Option<usize>, ProtocolError> {
    match parse_int(line)? {
        -1 => Ok(None),
        n if n < -1 => Err(ProtocolError::InvalidNumber),
        n if n as u64 > max as u64 => Err(ProtocolError::LengthOverflow(n)),
        n => Ok(Some(n as usize)),
    }
}

fn decode_at(buf: &[u8], pos: usize, depth: usize) -> Result<Option<(RespFrame, usize)>, ProtocolError> {
    let Some(&kind) = buf.get(pos) else { return Ok(None) };
    if !matches!(kind, b'+' | b'-' | b':' | b'$' | b'*') {
        return Err(ProtocolError::InvalidType(kind));
    }
    let Some((line, next)) = read_line(buf, pos + 1)? else { return Ok(None) };
    match kind {
        b'+' => Ok(Some((RespFrame::Simple(line.to_vec()), next))),
        b'-' => Ok(Some((RespFrame::Error(line.to_vec()), next))),
        b':' => Ok(Some((RespFrame::Integer(parse_int(line)?), next))),
        b'$' => {
            let Some(len) = parse_len(line, MAX_BULK_LEN)? else {
                return Ok(Some((RespFrame::Bulk(None), next)));
            };
            if buf.len() < next + len + 2 {
                return Ok(None);
            }
            if &buf[next + len..next + len + 2] != b"\r\n" {
                return Err(ProtocolError::BadBulkTerminator);
            }
            Ok(Some((RespFrame::Bulk(Some(buf[next..next + len].to_vec())), next + len + 2)))
        }
        _ => {
            let Some(count) = parse_len(line, MAX_ARRAY_LEN)? else {
                return Ok(Some((RespFrame::Array(None), next)));
            };
            if count > 0 && depth >= MAX_DEPTH {
                return Err(ProtocolError::TooDeep);
            }
            // every element needs at least three bytes, so never trust `count`
            // for the allocation beyond what the buffer could hold
            let mut items = Vec::with_capacity(count.min((buf.len() - next) / 3));
            let mut at = next;
            for _ in 0..count {
                match decode_at(buf, at, depth + 1)? {
                    Some((item, after)) => {
                        items.push(item);
                        at = after;
                    }
                    None => return Ok(None),
                }
            }
            Ok(Some((RespFrame::Array(Some(items)), at)))
        }
    }
}

/// Decodes one frame from the front of `buf`.
///
/// Returns `Ok(None)` when `buf` holds only part of a frame; nothing is
/// consumed in that case. On success returns the frame and the number of
/// bytes it occupied.
pub fn decode_frame(buf: &[u8]) -> Result<Option<(RespFrame, usize)>, ProtocolError> {
    decode_at(buf, 0, 0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn enc(f: &RespFrame) -> Vec<u8> {
        encode_frame(f).unwrap()
    }

    #[test]
    fn encodes_examples() {
        assert_eq!(enc(&RespFrame::ok()), b"+OK\r\n");
        assert_eq!(enc(&RespFrame::Bulk(None)), b"$-1\r\n");
        assert_eq!(enc(&RespFrame::Array(None)), b"*-1\r\n");
        assert_eq!(enc(&RespFrame::Integer(-42)), b":-42\r\n");
        assert_eq!(enc(&RespFrame::error("ERR x")), b"-ERR x\r\n");
        let get = RespFrame::Array(Some(vec![RespFrame::bulk("GET"), RespFrame::bulk("longest")]));
        assert_eq!(enc(&get), b"*2\r\n$3\r\nGET\r\n$7\r\nlongest\r\n");
        let mut cmd = Vec::new();
        encode_command(&[b"GET", b"longest"], &mut cmd);
        assert_eq!(cmd, enc(&get));
        assert_eq!(enc(&RespFrame::bulk("")), b"$0\r\n\r\n");
    }

    #[test]
    fn rejects_line_breaks_in_simple_payloads() {
        assert_eq!(encode_frame(&RespFrame::Simple(b"a\r\nb".to_vec())), Err(ProtocolError::LineBreakInPayload));
        assert_eq!(encode_frame(&RespFrame::Error(b"a\nb".to_vec())), Err(ProtocolError::LineBreakInPayload));
    }

    #[test]
    fn decodes_examples() {
        assert_eq!(decode_frame(b":1\r\n").unwrap(), Some((RespFrame::Integer(1), 4)));
        assert_eq!(decode_frame(b"$5\r\nhel").unwrap(), None);
        assert_eq!(decode_frame(b"").unwrap(), None);
        assert_eq!(decode_frame(b"*2\r\n$3\r\nGET\r\n").unwrap(), None);
        assert_eq!(decode_frame(b"$-1\r\n").unwrap(), Some((RespFrame::Bulk(None), 5)));
        assert_eq!(decode_frame(b"*-1\r\n").unwrap(), Some((RespFrame::Array(None), 5)));
        assert_eq!(
            decode_frame(b"+OK\r\n:2\r\n").unwrap(),
            Some((RespFrame::ok(), 5))
        );
        assert_eq!(decode_frame(b"*0\r\n").unwrap(), Some((RespFrame::Array(Some(vec![])), 4)));
    }

    #[test]
    fn rejects_malformed_input() {
        assert_eq!(decode_frame(b"?x\r\n"), Err(ProtocolError::InvalidType(b'?')));
        assert_eq!(decode_frame(b":12a\r\n"), Err(ProtocolError::InvalidNumber));
        assert_eq!(decode_frame(b":\r\n"), Err(ProtocolError::InvalidNumber));
        assert_eq!(decode_frame(b":+1\r\n"), Err(ProtocolError::InvalidNumber));
        assert_eq!(decode_frame(b"$-2\r\n"), Err(ProtocolError::InvalidNumber));
        assert_eq!(decode_frame(b"$3\r\nabcd\r\n"), Err(ProtocolError::BadBulkTerminator));
        assert_eq!(decode_frame(b"+a\rb\r\n"), Err(ProtocolError::BadLineEnding));
        assert_eq!(decode_frame(b"+a\n"), Err(ProtocolError::BadLineEnding));
        assert!(matches!(decode_frame(b"$99999999999\r\n"), Err(ProtocolError::LengthOverflow(_))));
        assert!(matches!(decode_frame(b":99999999999999999999\r\n"), Err(ProtocolError::InvalidNumber)));
        let deep: Vec<u8> = b"*1\r\n".repeat(MAX_DEPTH + 1);
        assert_eq!(decode_frame(&deep), Err(ProtocolError::TooDeep));
    }

    #[test]
    fn huge_declared_array_does_not_allocate_up_front() {
        assert_eq!(decode_frame(b"*16777216\r\n:1\r\n").unwrap(), None);
    }
}
