//! Shard dump/load for test fixtures.
//!
//! Text format: a header line
//!
//! ```text
//! meritfed-shard v1 dim=<d> count=<n> group=<g> labeled=<0|1>
//! ```
//!
//! followed by exactly `n` comma-separated rows, each holding the label
//! first (when labeled) and then `d` features. Blank lines and trailing
//! whitespace are ignored; `\r\n` endings are accepted.
//!
//! Binary format (all little-endian): magic `MFSHARD1`, `u32` dim, `u64`
//! count, `u32` group, `u8` labeled, then `count` records of an optional
//! `u32` label followed by `d` `f64` features. Trailing bytes are an error.
//!
//! Decoders reject non-finite features and never allocate more than the
//! input can back.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::tasks::Shard;

pub const TEXT_MAGIC: &str = "meritfed-shard v1";
pub const BINARY_MAGIC: &[u8; 8] = b"MFSHARD1";

fn decode_err(msg: impl Into<String>) -> Error {
    Error::Decode(msg.into())
}

fn check_shard(shard: &Shard) -> Result<()> {
    let expected = shard.len().checked_mul(shard.dim);
    if shard.dim == 0 || expected != Some(shard.features.len()) {
        return Err(Error::Data("shard features do not match its dimension".into()));
    }
    if let Some(labels) = &shard.labels {
        if labels.len() != shard.len() {
            return Err(Error::Data("shard label count does not match row count".into()));
        }
    }
    Ok(())
}

pub fn encode_text(shard: &Shard) -> Result<String> {
    check_shard(shard)?;
    let n = shard.len();
    let mut out = format!(
        "{TEXT_MAGIC} dim={} count={n} group={} labeled={}\n",
        shard.dim,
        shard.group,
        u8::from(shard.labels.is_some())
    );
    for i in 0..n {
        let mut first = true;
        if let Some(label) = shard.label(i) {
            let _ = write!(out, "{label}");
            first = false;
        }
        for v in shard.row(i) {
            if !first {
                out.push(',');
            }
            // `{:?}` prints the shortest representation that round-trips.
            let _ = write!(out, "{v:?}");
            first = false;
        }
        out.push('\n');
    }
    Ok(out)
}

fn header_field<'a>(token: Option<&'a str>, key: &str) -> Result<&'a str> {
    token
        .and_then(|t| t.strip_prefix(key))
        .and_then(|t| t.strip_prefix('='))
        .ok_or_else(|| decode_err(format!("header: expected `{key}=<value>`")))
}

fn parse_num<T: std::str::FromStr>(s: &str, what: &str) -> Result<T> {
    s.parse().map_err(|_| decode_err(format!("invalid {what} `{s}`")))
}

pub fn decode_text(text: &str) -> Result<Shard> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end()))
        .filter(|(_, l)| !l.is_empty());
    let (_, header) = lines.next().ok_or_else(|| decode_err("empty input"))?;
    let rest = header
        .strip_prefix(TEXT_MAGIC)
        .ok_or_else(|| decode_err(format!("header must start with `{TEXT_MAGIC}`")))?;
    let mut tokens = rest.split_whitespace();
    let dim: usize = parse_num(header_field(tokens.next(), "dim")?, "dim")?;
    let count: usize = parse_num(header_field(tokens.next(), "count")?, "count")?;
    let group: u32 = parse_num(header_field(tokens.next(), "group")?, "group")?;
    let labeled = match header_field(tokens.next(), "labeled")? {
        "0" => false,
        "1" => true,
        other => return Err(decode_err(format!("invalid labeled flag `{other}`"))),
    };
    if tokens.next().is_some() {
        return Err(decode_err("header: unexpected trailing fields"));
    }
    if dim == 0 {
        return Err(decode_err("dim must be >= 1"));
    }
    let width = dim + usize::from(labeled);

    // Each row needs at least `2 * width - 1` bytes, which bounds `count`.
    let min_bytes = count
        .checked_mul(2 * width)
        .ok_or_else(|| decode_err("count overflows"))?;
    if min_bytes > text.len() + count {
        return Err(decode_err(format!("input too short for {count} rows")));
    }

    let mut features = Vec::with_capacity(count * dim);
    let mut labels = labeled.then(|| Vec::with_capacity(count));
    let mut rows = 0usize;
    for (lineno, line) in lines {
        if rows == count {
            return Err(decode_err(format!("line {lineno}: more rows than count={count}")));
        }
        let mut fields = line.split(',').map(str::trim);
        if let Some(labels) = labels.as_mut() {
            let f = fields.next().unwrap_or("");
            labels.push(parse_num(f, &format!("label on line {lineno}"))?);
        }
        let mut seen = 0usize;
        for f in fields {
            let v: f64 = parse_num(f, &format!("feature on line {lineno}"))?;
            if !v.is_finite() {
                return Err(decode_err(format!("line {lineno}: non-finite feature")));
            }
            seen += 1;
            if seen > dim {
                break;
            }
            features.push(v);
        }
        if seen != dim {
            return Err(decode_err(format!(
                "line {lineno}: expected {width} fields, got {}",
                seen + usize::from(labeled)
            )));
        }
        rows += 1;
    }
    if rows != count {
        return Err(decode_err(format!("expected {count} rows, got {rows}")));
    }
    Ok(Shard { dim, features, labels, group, owner: 0 })
}

pub fn encode_binary(shard: &Shard) -> Result<Vec<u8>> {
    check_shard(shard)?;
    let dim = u32::try_from(shard.dim).map_err(|_| Error::Data("dimension exceeds u32".into()))?;
    let n = shard.len();
    let labeled = shard.labels.is_some();
    let record = shard.dim * 8 + if labeled { 4 } else { 0 };
    let mut out = Vec::with_capacity(25 + n * record);
    out.extend_from_slice(BINARY_MAGIC);
    out.extend_from_slice(&dim.to_le_bytes());
    out.extend_from_slice(&(n as u64).to_le_bytes());
    out.extend_from_slice(&shard.group.to_le_bytes());
    out.push(u8::from(labeled));
    for i in 0..n {
        if let Some(label) = shard.label(i) {
            out.extend_from_slice(&label.to_le_bytes());
        }
        for v in shard.row(i) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        if self.buf.len() < N {
            return Err(decode_err("unexpected end of input"));
        }
        let (head, tail) = self.buf.split_at(N);
        self.buf = tail;
        Ok(head.try_into().expect("length checked"))
    }
}

pub fn decode_binary(bytes: &[u8]) -> Result<Shard> {
    let mut r = Reader { buf: bytes };
    if &r.take::<8>()? != BINARY_MAGIC {
        return Err(decode_err("bad magic"));
    }
    let dim = u32::from_le_bytes(r.take()?) as usize;
    let count = u64::from_le_bytes(r.take()?);
    let group = u32::from_le_bytes(r.take()?);
    let labeled = match r.take::<1>()?[0] {
        0 => false,
        1 => true,
        b => return Err(decode_err(format!("invalid labeled flag {b}"))),
    };
    if dim == 0 {
        return Err(decode_err("dim must be >= 1"));
    }
    let record = dim
        .checked_mul(8)
        .and_then(|b| b.checked_add(if labeled { 4 } else { 0 }))
        .ok_or_else(|| decode_err("record size overflows"))?;
    let count = usize::try_from(count).map_err(|_| decode_err("count overflows"))?;
    let body = count
        .checked_mul(record)
        .ok_or_else(|| decode_err("body size overflows"))?;
    if body != r.buf.len() {
        return Err(decode_err(format!(
            "body is {} bytes, header implies {body}",
            r.buf.len()
        )));
    }
    let mut features = Vec::with_capacity(count * dim);
    let mut labels = labeled.then(|| Vec::with_capacity(count));
    for row in 0..count {
        if let Some(labels) = labels.as_mut() {
            labels.push(u32::from_le_bytes(r.take()?));
        }
        for _ in 0..dim {
            let v = f64::from_le_bytes(r.take()?);
            if !v.is_finite() {
                return Err(decode_err(format!("row {row}: non-finite feature")));
            }
            features.push(v);
        }
    }
    Ok(Shard { dim, features, labels, group, owner: 0 })
}
