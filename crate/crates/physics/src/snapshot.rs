//! Particle dumps.
//!
//! Binary layout, little-endian: a `u32` particle count followed by 13 `f32`
//! per particle: `x y z vx vy vz mass volume source_stroke F00 F11 F22 detF`.
//! A JSON header beside it records step, time and grid.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{PhysicsError, Result};
use crate::state::{SandParticle, SandState};

pub const FLOATS_PER_PARTICLE: usize = 13;

/// One decoded particle record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SnapshotRecord(pub [f32; FLOATS_PER_PARTICLE]);

impl SnapshotRecord {
    pub fn from_particle(p: &SandParticle) -> Self {
        let f = &p.f_elastic;
        Self([
            p.position.x as f32,
            p.position.y as f32,
            p.position.z as f32,
            p.velocity.x as f32,
            p.velocity.y as f32,
            p.velocity.z as f32,
            p.mass as f32,
            p.volume as f32,
            p.source_stroke as f32,
            f[(0, 0)] as f32,
            f[(1, 1)] as f32,
            f[(2, 2)] as f32,
            f.determinant() as f32,
        ])
    }

    pub fn position(&self) -> [f32; 3] {
        [self.0[0], self.0[1], self.0[2]]
    }

    pub fn mass(&self) -> f32 {
        self.0[6]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotHeader {
    pub step: u64,
    pub time: f64,
    pub particle_count: usize,
    pub dx: f64,
    pub grid: [usize; 3],
    pub layout: String,
}

pub fn write_particles(mut out: impl Write, particles: &[SandParticle]) -> Result<()> {
    let n = u32::try_from(particles.len()).map_err(|_| PhysicsError::Snapshot("too many particles".into()))?;
    let mut buf = Vec::with_capacity(4 + particles.len() * FLOATS_PER_PARTICLE * 4);
    buf.extend_from_slice(&n.to_le_bytes());
    for p in particles {
        for v in SnapshotRecord::from_particle(p).0 {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.write_all(&buf)?;
    Ok(())
}

pub fn read_particles(mut input: impl Read) -> Result<Vec<SnapshotRecord>> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    let Some((head, body)) = bytes.split_first_chunk::<4>() else {
        return Err(PhysicsError::Snapshot("missing particle count".into()));
    };
    let n = u32::from_le_bytes(*head) as usize;
    if body.len() != n * FLOATS_PER_PARTICLE * 4 {
        return Err(PhysicsError::Snapshot(format!(
            "expected {} bytes of particle data, found {}",
            n * FLOATS_PER_PARTICLE * 4,
            body.len()
        )));
    }
    Ok(body
        .chunks_exact(FLOATS_PER_PARTICLE * 4)
        .map(|rec| {
            let mut r = [0f32; FLOATS_PER_PARTICLE];
            for (v, b) in r.iter_mut().zip(rec.chunks_exact(4)) {
                *v = f32::from_le_bytes(b.try_into().expect("4 bytes"));
            }
            SnapshotRecord(r)
        })
        .collect())
}

/// Writes `<stem>.bin` and `<stem>.json` into `dir`.
pub fn save_snapshot(state: &SandState, dir: impl AsRef<Path>, stem: &str) -> Result<SnapshotHeader> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let file = std::fs::File::create(dir.join(format!("{stem}.bin")))?;
    write_particles(std::io::BufWriter::new(file), &state.particles)?;
    let header = SnapshotHeader {
        step: state.steps,
        time: state.time,
        particle_count: state.particles.len(),
        dx: state.grid.dx,
        grid: state.grid.dims,
        layout: "u32 count; f32 x13 LE: x y z vx vy vz mass volume source_stroke F00 F11 F22 detF".into(),
    };
    std::fs::write(dir.join(format!("{stem}.json")), serde_json::to_string_pretty(&header)?)?;
    Ok(header)
}

pub fn load_snapshot(dir: impl AsRef<Path>, stem: &str) -> Result<(SnapshotHeader, Vec<SnapshotRecord>)> {
    let dir = dir.as_ref();
    let header: SnapshotHeader = serde_json::from_str(&std::fs::read_to_string(dir.join(format!("{stem}.json")))?)?;
    let records = read_particles(std::fs::File::open(dir.join(format!("{stem}.bin")))?)?;
    if records.len() != header.particle_count {
        return Err(PhysicsError::Snapshot("header and body particle counts differ".into()));
    }
    Ok((header, records))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    #[test]
    fn binary_round_trip() {
        let mut p = SandParticle::at_rest(Vector3::new(0.1, 0.2, 0.3), 1e-3, 2e-6, 17);
        p.velocity = Vector3::new(-1.0, 0.5, 2.0);
        p.f_elastic[(0, 0)] = 1.25;
        let mut buf = Vec::new();
        write_particles(&mut buf, &[p.clone(), p]).unwrap();
        assert_eq!(buf.len(), 4 + 2 * 13 * 4);
        let recs = read_particles(&buf[..]).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].0, [0.1, 0.2, 0.3, -1.0, 0.5, 2.0, 1e-3, 2e-6, 17.0, 1.25, 1.0, 1.0, 1.25]);
        assert!(read_particles(&buf[..buf.len() - 1]).is_err());
    }
}
