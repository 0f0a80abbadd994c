//! Event file formats.
//!
//! CSV: one `x,y,t,p` record per line, optional header, polarity in
//! `{-1, 1}` or `{0, 1}` with 0 read as -1.
//!
//! EVT1: little-endian, `b"EVT1"`, `u32` count, then per event
//! `u16 x, u16 y, u64 t, i8 p` (13 bytes, no padding).

use std::io::{BufRead, Write};
use std::path::Path;

use super::Event;
use crate::error::{Error, Result};

pub const EVT1_MAGIC: &[u8; 4] = b"EVT1";
const RECORD_LEN: usize = 13;

pub fn read_csv<R: BufRead>(reader: R) -> Result<Vec<Event>> {
    let mut events = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').map(str::trim).collect();
        if fields.len() != 4 {
            return Err(Error::parse(
                format!("line {lineno}"),
                format!("expected 4 fields x,y,t,p, found {}", fields.len()),
            ));
        }
        if lineno == 1 && fields[0].parse::<i64>().is_err() {
            // header row
            continue;
        }
        let field = |k: usize, name: &str| -> Result<i64> {
            fields[k].parse::<i64>().map_err(|_| {
                Error::parse(
                    format!("line {lineno}"),
                    format!("field {name} is not an integer: {:?}", fields[k]),
                )
            })
        };
        let (x, y, t, p) = (field(0, "x")?, field(1, "y")?, field(2, "t")?, field(3, "p")?);
        if !(0..=u16::MAX as i64).contains(&x) || !(0..=u16::MAX as i64).contains(&y) {
            return Err(Error::parse(
                format!("line {lineno}"),
                format!("coordinate ({x}, {y}) out of u16 range"),
            ));
        }
        if t < 0 {
            return Err(Error::parse(format!("line {lineno}"), "negative timestamp"));
        }
        let p = match p {
            0 | -1 => -1,
            1 => 1,
            other => {
                return Err(Error::parse(
                    format!("line {lineno}"),
                    format!("polarity {other} not in {{-1, 0, 1}}"),
                ))
            }
        };
        events.push(Event::new(x as u16, y as u16, t as u64, p));
    }
    Ok(events)
}

pub fn write_csv<W: Write>(mut w: W, events: &[Event]) -> Result<()> {
    writeln!(w, "x,y,t,p")?;
    for e in events {
        writeln!(w, "{},{},{},{}", e.x, e.y, e.t, e.p)?;
    }
    Ok(())
}

pub fn read_evt1(bytes: &[u8]) -> Result<Vec<Event>> {
    if bytes.len() < 8 || &bytes[..4] != EVT1_MAGIC {
        return Err(Error::parse("offset 0", "missing EVT1 magic"));
    }
    let count = u32::from_le_bytes([bytes[4], bytes[5], bytes[6], bytes[7]]) as usize;
    let body = &bytes[8..];
    if body.len() != count * RECORD_LEN {
        return Err(Error::parse(
            "offset 8",
            format!(
                "header declares {count} events ({} bytes) but payload has {} bytes",
                count * RECORD_LEN,
                body.len()
            ),
        ));
    }
    Ok(body
        .chunks_exact(RECORD_LEN)
        .map(|r| {
            let x = u16::from_le_bytes([r[0], r[1]]);
            let y = u16::from_le_bytes([r[2], r[3]]);
            let t = u64::from_le_bytes(r[4..12].try_into().unwrap());
            Event::new(x, y, t, r[12] as i8)
        })
        .collect())
}

pub fn write_evt1(events: &[Event]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + events.len() * RECORD_LEN);
    out.extend_from_slice(EVT1_MAGIC);
    out.extend_from_slice(&(events.len() as u32).to_le_bytes());
    for e in events {
        out.extend_from_slice(&e.x.to_le_bytes());
        out.extend_from_slice(&e.y.to_le_bytes());
        out.extend_from_slice(&e.t.to_le_bytes());
        out.push(e.p as u8);
    }
    out
}

/// Reads an event file, detecting EVT1 by its magic and falling back to CSV.
pub fn read_events(path: &Path) -> Result<Vec<Event>> {
    let bytes = std::fs::read(path)?;
    if bytes.starts_with(EVT1_MAGIC) {
        read_evt1(&bytes)
    } else {
        read_csv(bytes.as_slice())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_with_header_and_zero_polarity() {
        let text = "x,y,t,p\n1,2,30,0\n3,4,50,1\n";
        let ev = read_csv(text.as_bytes()).unwrap();
        assert_eq!(ev, vec![Event::new(1, 2, 30, -1), Event::new(3, 4, 50, 1)]);
    }

    #[test]
    fn csv_without_header() {
        let ev = read_csv("0,0,0,-1\n".as_bytes()).unwrap();
        assert_eq!(ev, vec![Event::new(0, 0, 0, -1)]);
    }

    #[test]
    fn malformed_line_is_named() {
        let err = read_csv("1,2,3,1\n1,2,x,1\n".as_bytes()).unwrap_err();
        match err {
            Error::Parse { location, .. } => assert_eq!(location, "line 2"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(read_csv("1,2,3\n".as_bytes()).is_err());
        assert!(read_csv("1,2,3,5\n".as_bytes()).is_err());
    }

    #[test]
    fn evt1_layout() {
        let bytes = write_evt1(&[Event::new(0x0102, 3, 0x0a0b, -1)]);
        assert_eq!(bytes.len(), 8 + 13);
        assert_eq!(&bytes[..8], b"EVT1\x01\x00\x00\x00");
        assert_eq!(&bytes[8..12], &[0x02, 0x01, 0x03, 0x00]);
        assert_eq!(bytes[20], 0xff);
        assert_eq!(read_evt1(&bytes).unwrap(), vec![Event::new(0x0102, 3, 0x0a0b, -1)]);
    }

    #[test]
    fn evt1_truncated() {
        let mut bytes = write_evt1(&[Event::new(1, 1, 1, 1)]);
        bytes.pop();
        assert!(read_evt1(&bytes).is_err());
    }
}
