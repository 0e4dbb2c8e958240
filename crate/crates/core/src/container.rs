//! Versioned little-endian binary containers for orbital sets ("RHFS") and
//! phase-space fields ("WGNR" for Wigner transforms, "VLSV" for Vlasov
//! solutions).
//!
//! Header: magic, version (u32), dim (u32), n (u32), L (f64), ε (f64),
//! N (u32); phase-space variants append n_v (u32) and Δv (f64). Orbital data
//! follows as N·n^d complex doubles (re, im), orbital by orbital; phase-space
//! data as n·n_v doubles, position-major.

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use num_complex::Complex64;
use serde::Serialize;

use crate::density::OrbitalSet;
use crate::error::{Error, Result};
use crate::semiclassics::{VelocityGrid, WignerField};
use crate::spectral::{make_grid, Field, Grid};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ContainerKind {
    Orbitals,
    Wigner,
    Vlasov,
}

impl ContainerKind {
    pub fn magic(self) -> [u8; 4] {
        match self {
            Self::Orbitals => *b"RHFS",
            Self::Wigner => *b"WGNR",
            Self::Vlasov => *b"VLSV",
        }
    }

    fn from_magic(magic: [u8; 4]) -> Result<Self> {
        match &magic {
            b"RHFS" => Ok(Self::Orbitals),
            b"WGNR" => Ok(Self::Wigner),
            b"VLSV" => Ok(Self::Vlasov),
            _ => Err(Error::Format(format!("unknown magic {:?}", String::from_utf8_lossy(&magic)))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContainerHeader {
    pub kind: ContainerKind,
    pub version: u32,
    pub dim: u32,
    pub points_per_dim: u32,
    pub box_length: f64,
    pub epsilon: f64,
    pub n_particles: u32,
    /// `(n_v, Δv)` for phase-space containers.
    pub velocity: Option<(u32, f64)>,
}

impl ContainerHeader {
    pub fn grid(&self) -> Result<Grid> {
        make_grid(self.dim as usize, self.points_per_dim as usize, self.box_length, self.epsilon)
    }

    fn payload_len(&self) -> usize {
        let len = (self.points_per_dim as usize).pow(self.dim);
        match self.velocity {
            None => 16 * len * self.n_particles as usize,
            Some((nv, _)) => 8 * len * nv as usize,
        }
    }
}

impl fmt::Display for ContainerHeader {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let magic = self.kind.magic();
        writeln!(f, "magic          {}", String::from_utf8_lossy(&magic))?;
        writeln!(f, "version        {}", self.version)?;
        writeln!(f, "dim            {}", self.dim)?;
        writeln!(f, "points_per_dim {}", self.points_per_dim)?;
        writeln!(f, "box_length     {:.17e}", self.box_length)?;
        writeln!(f, "epsilon        {:.17e}", self.epsilon)?;
        write!(f, "n_particles    {}", self.n_particles)?;
        if let Some((nv, dv)) = self.velocity {
            write!(f, "\nn_v            {nv}\ndv             {dv:.17e}")?;
        }
        Ok(())
    }
}

fn header_for(kind: ContainerKind, grid: &Grid, n_particles: usize, velocity: Option<VelocityGrid>) -> ContainerHeader {
    ContainerHeader {
        kind,
        version: FORMAT_VERSION,
        dim: grid.dim() as u32,
        points_per_dim: grid.points_per_dim() as u32,
        box_length: grid.box_length(),
        epsilon: grid.epsilon(),
        n_particles: n_particles as u32,
        velocity: velocity.map(|v| (v.n_v as u32, v.dv)),
    }
}

fn write_header<W: Write>(w: &mut W, h: &ContainerHeader) -> Result<()> {
    w.write_all(&h.kind.magic())?;
    w.write_all(&h.version.to_le_bytes())?;
    w.write_all(&h.dim.to_le_bytes())?;
    w.write_all(&h.points_per_dim.to_le_bytes())?;
    w.write_all(&h.box_length.to_le_bytes())?;
    w.write_all(&h.epsilon.to_le_bytes())?;
    w.write_all(&h.n_particles.to_le_bytes())?;
    if let Some((nv, dv)) = h.velocity {
        w.write_all(&nv.to_le_bytes())?;
        w.write_all(&dv.to_le_bytes())?;
    }
    Ok(())
}

fn read_array<const K: usize, R: Read>(r: &mut R) -> Result<[u8; K]> {
    let mut buf = [0u8; K];
    r.read_exact(&mut buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Format("truncated header".into()),
        _ => Error::Io(e),
    })?;
    Ok(buf)
}

pub fn read_header<R: Read>(r: &mut R) -> Result<ContainerHeader> {
    let kind = ContainerKind::from_magic(read_array::<4, _>(r)?)?;
    let version = u32::from_le_bytes(read_array(r)?);
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let dim = u32::from_le_bytes(read_array(r)?);
    let points_per_dim = u32::from_le_bytes(read_array(r)?);
    let box_length = f64::from_le_bytes(read_array(r)?);
    let epsilon = f64::from_le_bytes(read_array(r)?);
    let n_particles = u32::from_le_bytes(read_array(r)?);
    let velocity = match kind {
        ContainerKind::Orbitals => None,
        _ => Some((u32::from_le_bytes(read_array(r)?), f64::from_le_bytes(read_array(r)?))),
    };
    if !(1..=3).contains(&dim) {
        return Err(Error::Format(format!("dimension {dim} out of range")));
    }
    Ok(ContainerHeader {
        kind,
        version,
        dim,
        points_per_dim,
        box_length,
        epsilon,
        n_particles,
        velocity,
    })
}

fn read_payload<R: Read>(r: &mut R, header: &ContainerHeader) -> Result<Vec<f64>> {
    let mut bytes = vec![0u8; header.payload_len()];
    r.read_exact(&mut bytes).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Format("truncated payload".into()),
        _ => Error::Io(e),
    })?;
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(Error::Format(format!("{} trailing bytes", rest.len())));
    }
    Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect())
}

pub fn write_orbitals<W: Write>(w: &mut W, orbitals: &OrbitalSet) -> Result<()> {
    write_header(w, &header_for(ContainerKind::Orbitals, orbitals.grid(), orbitals.n_particles(), None))?;
    for f in orbitals.orbitals() {
        for v in f {
            w.write_all(&v.re.to_le_bytes())?;
            w.write_all(&v.im.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Reads an orbital container. Orthonormality is not re-checked, so
/// mid-interval checkpoints load exactly as written.
pub fn read_orbitals<R: Read>(r: &mut R) -> Result<OrbitalSet> {
    let header = read_header(r)?;
    if header.kind != ContainerKind::Orbitals {
        return Err(Error::Format(format!("expected an orbital container, found {:?}", header.kind)));
    }
    let grid = header.grid()?;
    let data = read_payload(r, &header)?;
    let orbitals: Vec<Field> = data
        .chunks_exact(2 * grid.len().max(1))
        .map(|c| c.chunks_exact(2).map(|p| Complex64::new(p[0], p[1])).collect())
        .collect();
    OrbitalSet::new_unchecked(grid, orbitals)
}

pub fn write_phase_space<W: Write>(w: &mut W, kind: ContainerKind, field: &WignerField, n_particles: usize) -> Result<()> {
    if kind == ContainerKind::Orbitals {
        return Err(Error::Format("phase-space data needs a WGNR or VLSV container".into()));
    }
    write_header(w, &header_for(kind, &field.grid, n_particles, Some(field.v_grid)))?;
    for v in &field.values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_phase_space<R: Read>(r: &mut R) -> Result<(ContainerHeader, WignerField)> {
    let header = read_header(r)?;
    let Some((n_v, dv)) = header.velocity else {
        return Err(Error::Format("expected a phase-space container".into()));
    };
    let grid = header.grid()?;
    let v_grid = VelocityGrid { n_v: n_v as usize, dv };
    let mut field = WignerField::zeros(&grid, v_grid).map_err(|e| Error::Format(e.to_string()))?;
    field.values = read_payload(r, &header)?;
    Ok((header, field))
}

pub fn save_orbitals(path: &Path, orbitals: &OrbitalSet) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_orbitals(&mut w, orbitals)?;
    w.flush()?;
    Ok(())
}

pub fn load_orbitals(path: &Path) -> Result<OrbitalSet> {
    read_orbitals(&mut BufReader::new(File::open(path)?))
}

pub fn save_phase_space(path: &Path, kind: ContainerKind, field: &WignerField, n_particles: usize) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_phase_space(&mut w, kind, field, n_particles)?;
    w.flush()?;
    Ok(())
}

pub fn inspect(path: &Path) -> Result<ContainerHeader> {
    read_header(&mut BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::semiclassics::wigner_transform;
    use crate::spectral::DispersionKind;

    #[test]
    fn orbitals_round_trip_bit_exact() {
        let grid = make_grid(2, 8, 3.0, 0.25).unwrap();
        let sea = OrbitalSet::fermi_sea(&grid, 5, &DispersionKind::Massless).unwrap();
        let mut buf = Vec::new();
        write_orbitals(&mut buf, &sea).unwrap();
        assert_eq!(&buf[..4], b"RHFS");
        assert_eq!(buf.len(), 4 + 4 * 4 + 8 * 2 + 16 * 5 * 64);
        let back = read_orbitals(&mut buf.as_slice()).unwrap();
        assert_eq!(back, sea);
    }

    #[test]
    fn phase_space_round_trip() {
        let grid = make_grid(1, 16, 4.0, 0.5).unwrap();
        let sea = OrbitalSet::fermi_sea(&grid, 3, &DispersionKind::Relativistic { m0: 1.0 }).unwrap();
        let w = wigner_transform(&sea, VelocityGrid::for_grid(&grid)).unwrap();
        let mut buf = Vec::new();
        write_phase_space(&mut buf, ContainerKind::Vlasov, &w, 3).unwrap();
        let (header, back) = read_phase_space(&mut buf.as_slice()).unwrap();
        assert_eq!(header.kind, ContainerKind::Vlasov);
        assert_eq!(header.velocity, Some((32, w.v_grid.dv)));
        assert_eq!(back, w);
        assert!(read_orbitals(&mut buf.as_slice()).is_err());
    }

    #[test]
    fn corrupt_containers_are_rejected() {
        let grid = make_grid(1, 8, 4.0, 0.5).unwrap();
        let sea = OrbitalSet::fermi_sea(&grid, 2, &DispersionKind::Massless).unwrap();
        let mut buf = Vec::new();
        write_orbitals(&mut buf, &sea).unwrap();
        assert!(matches!(read_orbitals(&mut &buf[..buf.len() - 1]), Err(Error::Format(_))));
        let mut extra = buf.clone();
        extra.push(0);
        assert!(matches!(read_orbitals(&mut extra.as_slice()), Err(Error::Format(_))));
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_orbitals(&mut bad.as_slice()), Err(Error::Format(_))));
        let mut version = buf;
        version[4] = 9;
        assert!(matches!(read_orbitals(&mut version.as_slice()), Err(Error::Format(_))));
    }
}
