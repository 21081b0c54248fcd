use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use super::{AutoEncoderSpec, TrainError, TrainState};
use crate::synth::SlotLayout;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SLOTAE01";

/// Little-endian layout: magic, `u32` pixels / slots / slot dim / hidden,
/// `f64` slope, `u64` seed / step / epoch / parameter count, then parameters,
/// first moments and second moments as `f64`.
pub fn write_checkpoint<W: Write>(spec: &AutoEncoderSpec, state: &TrainState, mut w: W) -> Result<(), TrainError> {
    spec.check_params(&state.params)?;
    w.write_all(CHECKPOINT_MAGIC)?;
    for v in [spec.pixels, spec.layout.slots, spec.layout.slot_dim, spec.hidden] {
        w.write_all(&(v as u32).to_le_bytes())?;
    }
    w.write_all(&spec.slope.to_le_bytes())?;
    for v in [state.seed, state.step, state.epoch as u64, state.params.len() as u64] {
        w.write_all(&v.to_le_bytes())?;
    }
    for vec in [&state.params, &state.m, &state.v] {
        for x in vec.iter() {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_exact<R: Read, const N: usize>(r: &mut R) -> Result<[u8; N], TrainError> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf).map_err(|e| if e.kind() == ErrorKind::UnexpectedEof { TrainError::Truncated } else { e.into() })?;
    Ok(buf)
}

fn read_u32<R: Read>(r: &mut R) -> Result<usize, TrainError> {
    Ok(u32::from_le_bytes(read_exact::<R, 4>(r)?) as usize)
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64, TrainError> {
    Ok(u64::from_le_bytes(read_exact::<R, 8>(r)?))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64, TrainError> {
    Ok(f64::from_le_bytes(read_exact::<R, 8>(r)?))
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<(AutoEncoderSpec, TrainState), TrainError> {
    if &read_exact::<R, 8>(&mut r)? != CHECKPOINT_MAGIC {
        return Err(TrainError::BadMagic);
    }
    let pixels = read_u32(&mut r)?;
    let slots = read_u32(&mut r)?;
    let slot_dim = read_u32(&mut r)?;
    let hidden = read_u32(&mut r)?;
    let slope = read_f64(&mut r)?;
    let spec = AutoEncoderSpec { pixels, layout: SlotLayout::new(slots, slot_dim), hidden, slope };
    let seed = read_u64(&mut r)?;
    let step = read_u64(&mut r)?;
    let epoch = read_u64(&mut r)? as usize;
    let count = read_u64(&mut r)? as usize;
    if count != spec.param_count() {
        return Err(TrainError::DimensionMismatch {
            expected: format!("{} parameters for the stored architecture", spec.param_count()),
            found: count.to_string(),
        });
    }
    let mut read_vec = || (0..count).map(|_| read_f64(&mut r)).collect::<Result<Vec<f64>, _>>();
    let params = read_vec()?;
    let m = read_vec()?;
    let v = read_vec()?;
    Ok((spec, TrainState { params, m, v, step, epoch, seed }))
}

/// Writes through a temporary file and renames it into place.
pub fn save_checkpoint(path: &Path, spec: &AutoEncoderSpec, state: &TrainState) -> Result<(), TrainError> {
    let tmp = path.with_extension("tmp");
    {
        let file = File::create(&tmp)?;
        let mut w = BufWriter::new(file);
        write_checkpoint(spec, state, &mut w)?;
        w.into_inner().map_err(|e| e.into_error())?.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Loads a checkpoint and checks it was written for `expected`.
pub fn load_checkpoint(path: &Path, expected: &AutoEncoderSpec) -> Result<TrainState, TrainError> {
    let (spec, state) = read_checkpoint(BufReader::new(File::open(path)?))?;
    if spec != *expected {
        return Err(TrainError::DimensionMismatch { expected: format!("{expected:?}"), found: format!("{spec:?}") });
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> (AutoEncoderSpec, TrainState) {
        let spec = AutoEncoderSpec::new(6, SlotLayout::new(2, 1)).with_hidden(4);
        let mut state = TrainState::new(spec.init_params(5), 5);
        state.m.iter_mut().enumerate().for_each(|(i, m)| *m = i as f64 * 0.1);
        state.v.iter_mut().enumerate().for_each(|(i, v)| *v = (i as f64).sqrt());
        state.step = 42;
        state.epoch = 3;
        (spec, state)
    }

    #[test]
    fn round_trip_is_exact() {
        let (spec, state) = sample();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.bin");
        save_checkpoint(&path, &spec, &state).unwrap();
        let loaded = load_checkpoint(&path, &spec).unwrap();
        assert_eq!(loaded, state);
    }

    #[test]
    fn rejects_bad_files() {
        let (spec, state) = sample();
        let mut bytes = Vec::new();
        write_checkpoint(&spec, &state, &mut bytes).unwrap();
        let mut corrupt = bytes.clone();
        corrupt[0] = b'X';
        assert!(matches!(read_checkpoint(&corrupt[..]), Err(TrainError::BadMagic)));
        assert!(matches!(read_checkpoint(&bytes[..bytes.len() - 3]), Err(TrainError::Truncated)));

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.bin");
        std::fs::write(&path, &bytes).unwrap();
        let other = spec.with_hidden(5);
        assert!(matches!(load_checkpoint(&path, &other), Err(TrainError::DimensionMismatch { .. })));
    }
}
