//! CSV and binary formats for states, snapshot streams and energy series.

use crate::diagnostics::EnergyRecord;
use crate::discretization::Grid;
use crate::error::{Error, Result};
use crate::state::State;
use crate::timestepper::Mode;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

pub const CHECKPOINT_MAGIC: &[u8; 6] = b"B5KDV1";
pub const SNAPSHOT_MAGIC: &[u8; 6] = b"B5KDVS";

fn write_header<W: Write>(w: &mut W, provenance: &[String]) -> std::io::Result<()> {
    for line in provenance {
        writeln!(w, "# {line}")?;
    }
    Ok(())
}

pub fn write_state_csv<W: Write>(mut w: W, s: &State, g: &Grid, provenance: &[String]) -> std::io::Result<()> {
    write_header(&mut w, provenance)?;
    writeln!(w, "t,x,eta,u")?;
    for j in 0..s.len() {
        writeln!(w, "{:e},{:e},{:e},{:e}", s.t, g.x(j), s.eta[j], s.u[j])?;
    }
    Ok(())
}

/// Snapshots as CSV rows (t, x, eta, u).
pub fn write_snapshots_csv<W: Write>(mut w: W, snaps: &[State], g: &Grid, provenance: &[String]) -> std::io::Result<()> {
    write_header(&mut w, provenance)?;
    writeln!(w, "t,x,eta,u")?;
    for s in snaps {
        for j in 0..s.len() {
            writeln!(w, "{:e},{:e},{:e},{:e}", s.t, g.x(j), s.eta[j], s.u[j])?;
        }
    }
    Ok(())
}

pub fn write_energy_csv<W: Write>(mut w: W, recs: &[EnergyRecord], provenance: &[String]) -> std::io::Result<()> {
    write_header(&mut w, provenance)?;
    writeln!(w, "t,E,eta_xx_0,eta_xx_L,dis_residual")?;
    for r in recs {
        writeln!(w, "{:e},{:e},{:e},{:e},{:e}", r.t, r.energy, r.eta_xx_0, r.eta_xx_l, r.dis_residual)?;
    }
    Ok(())
}

fn parse_f64(tok: &str, line: usize) -> Result<f64> {
    tok.trim().parse().map_err(|_| Error::Format(format!("line {line}: bad number '{tok}'")))
}

/// Reads a series written by `write_energy_csv`; fields not stored come back as zero.
pub fn read_energy_csv<R: BufRead>(r: R) -> Result<Vec<EnergyRecord>> {
    let mut out = Vec::new();
    let mut seen_header = false;
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if !seen_header {
            if !line.starts_with("t,E") {
                return Err(Error::Format(format!("line {}: expected header 't,E,...', got '{line}'", i + 1)));
            }
            seen_header = true;
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(Error::Format(format!("line {}: expected 5 fields, got {}", i + 1, f.len())));
        }
        out.push(EnergyRecord {
            t: parse_f64(f[0], i + 1)?,
            energy: parse_f64(f[1], i + 1)?,
            eta_xx_0: parse_f64(f[2], i + 1)?,
            eta_xx_l: parse_f64(f[3], i + 1)?,
            u_xx_0: 0.0,
            u_xx_l: 0.0,
            nl_flux: 0.0,
            dis_residual: parse_f64(f[4], i + 1)?,
            h2_sq: 0.0,
        });
    }
    Ok(out)
}


/// Reads the first time level of a (t,x,eta,u) CSV.
pub fn read_state_csv<R: BufRead>(r: R) -> Result<State> {
    let (mut eta, mut u) = (Vec::new(), Vec::new());
    let mut t0 = None;
    let mut seen_header = false;
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if !seen_header {
            if line != "t,x,eta,u" {
                return Err(Error::Format(format!("expected header 't,x,eta,u', got '{line}'")));
            }
            seen_header = true;
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 4 {
            return Err(Error::Format(format!("line {}: expected 4 columns", i + 1)));
        }
        let t = parse_f64(cols[0], i + 1)?;
        match t0 {
            None => t0 = Some(t),
            Some(t0) if t != t0 => break,
            _ => {}
        }
        eta.push(parse_f64(cols[2], i + 1)?);
        u.push(parse_f64(cols[3], i + 1)?);
    }
    if eta.is_empty() {
        return Err(Error::Format("no state rows".into()));
    }
    State::new(eta, u, t0.unwrap_or(0.0))
}

pub fn write_checkpoint<W: Write>(mut w: W, s: &State, g: &Grid) -> std::io::Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&(g.n as u64).to_le_bytes())?;
    w.write_all(&g.l.to_le_bytes())?;
    w.write_all(&s.t.to_le_bytes())?;
    for v in s.eta.iter().chain(&s.u) {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(|_| Error::Format("truncated binary".into()))?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    Ok(f64::from_bits(read_u64(r)?))
}

/// Returns the state together with (N, L).
pub fn read_checkpoint<R: Read>(mut r: R) -> Result<(State, usize, f64)> {
    let mut magic = [0u8; 6];
    r.read_exact(&mut magic).map_err(|_| Error::Format("truncated checkpoint".into()))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Format("bad checkpoint magic".into()));
    }
    let n = read_u64(&mut r)? as usize;
    if n > 1 << 26 {
        return Err(Error::Format(format!("implausible node count {n}")));
    }
    let l = read_f64(&mut r)?;
    let t = read_f64(&mut r)?;
    let mut vals = Vec::with_capacity(2 * (n + 1));
    for _ in 0..2 * (n + 1) {
        vals.push(read_f64(&mut r)?);
    }
    let u = vals.split_off(n + 1);
    Ok((State::new(vals, u, t)?, n, l))
}

/// Header (magic, N, L, dt, mode tag), then per snapshot t followed by η and u.
pub fn write_snapshots_binary<W: Write>(mut w: W, snaps: &[State], g: &Grid, dt: f64, mode: Mode) -> std::io::Result<()> {
    w.write_all(SNAPSHOT_MAGIC)?;
    w.write_all(&(g.n as u64).to_le_bytes())?;
    w.write_all(&g.l.to_le_bytes())?;
    w.write_all(&dt.to_le_bytes())?;
    w.write_all(&mode.tag().to_le_bytes())?;
    for s in snaps {
        w.write_all(&s.t.to_le_bytes())?;
        for v in s.eta.iter().chain(&s.u) {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Checkpoint if the magic matches, CSV otherwise.
pub fn read_state(path: &Path) -> Result<State> {
    let mut f = BufReader::new(File::open(path)?);
    let head = f.fill_buf()?;
    if head.starts_with(CHECKPOINT_MAGIC) {
        Ok(read_checkpoint(f)?.0)
    } else {
        read_state_csv(f)
    }
}

pub fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}
