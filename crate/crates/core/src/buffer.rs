//! FIFO replay storage of solver samples with uniform minibatch draws.

use std::io::{Read, Write};

use nalgebra::DVector;
use rand::Rng;

use crate::envs::TimeState;
use crate::nets::TOSample;
use crate::{lit, to_f64, Error, Result, Scalar};

const DUMP_MAGIC: &[u8; 8] = b"CACTOBUF";
const DUMP_VERSION: u32 = 1;

pub const DEFAULT_CAPACITY: usize = 1 << 20;

#[derive(Clone, Debug)]
pub struct ReplayBuffer<T: Scalar> {
    store: Vec<TOSample<T>>,
    capacity: usize,
    /// Slot overwritten by the next push once the store is full.
    cursor: usize,
}

impl<T: Scalar> ReplayBuffer<T> {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidArgument("buffer capacity must be positive".into()));
        }
        Ok(Self {
            store: Vec::new(),
            capacity,
            cursor: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.store.len()
    }

    pub fn is_empty(&self) -> bool {
        self.store.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Appends in order, evicting the oldest samples when full. Returns the number stored.
    pub fn push_many(&mut self, samples: impl IntoIterator<Item = TOSample<T>>) -> usize {
        let mut count = 0;
        for s in samples {
            if self.store.len() < self.capacity {
                self.store.push(s);
            } else {
                self.store[self.cursor] = s;
                self.cursor = (self.cursor + 1) % self.capacity;
            }
            count += 1;
        }
        count
    }

    /// Samples oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = &TOSample<T>> {
        let (newer, older) = self.store.split_at(self.cursor);
        older.iter().chain(newer.iter())
    }

    /// Uniform draw with replacement.
    pub fn sample_minibatch<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Result<Vec<TOSample<T>>> {
        if self.store.is_empty() {
            return Err(Error::Empty("replay buffer"));
        }
        Ok((0..batch_size)
            .map(|_| self.store[rng.random_range(0..self.store.len())].clone())
            .collect())
    }

    /// Writes the buffer as fixed-width little-endian records, oldest first.
    ///
    /// Header: magic, version, model name, `n`, `m`, `K`, record count. Each
    /// record: `x (n f64)`, `t (u64)`, `u (m f64)`, `V_bar (f64)`,
    /// `V_bar_x (n f64)`, `x_after (n f64)`, `t_after (u64)`.
    pub fn dump<W: Write>(&self, mut w: W, model: &str, n: usize, m: usize, lookahead: usize) -> Result<()> {
        w.write_all(DUMP_MAGIC)?;
        w.write_all(&DUMP_VERSION.to_le_bytes())?;
        w.write_all(&(model.len() as u32).to_le_bytes())?;
        w.write_all(model.as_bytes())?;
        for v in [n, m, lookahead] {
            w.write_all(&(v as u32).to_le_bytes())?;
        }
        w.write_all(&(self.store.len() as u64).to_le_bytes())?;
        for s in self.iter() {
            if !s.is_valid(n, m) {
                return Err(Error::Format("sample dimensions do not match the dump header".into()));
            }
            let put = |w: &mut W, v: &DVector<T>| -> std::io::Result<()> {
                for &x in v.iter() {
                    w.write_all(&to_f64(x).to_le_bytes())?;
                }
                Ok(())
            };
            put(&mut w, &s.state.x)?;
            w.write_all(&(s.state.t as u64).to_le_bytes())?;
            put(&mut w, &s.control)?;
            w.write_all(&to_f64(s.v_bar).to_le_bytes())?;
            put(&mut w, &s.v_bar_x)?;
            put(&mut w, &s.state_after.x)?;
            w.write_all(&(s.state_after.t as u64).to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a dump written by [`ReplayBuffer::dump`] into a buffer of the given capacity.
    pub fn restore<R: Read>(mut r: R, capacity: usize) -> Result<(Self, DumpHeader)> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != DUMP_MAGIC {
            return Err(Error::Format("not a replay-buffer dump".into()));
        }
        let version = read_u32(&mut r)?;
        if version != DUMP_VERSION {
            return Err(Error::Format(format!("unsupported dump version {version}")));
        }
        let name_len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let model = String::from_utf8(name).map_err(|_| Error::Format("model name is not UTF-8".into()))?;
        let n = read_u32(&mut r)? as usize;
        let m = read_u32(&mut r)? as usize;
        let lookahead = read_u32(&mut r)? as usize;
        let count = read_u64(&mut r)? as usize;
        let mut buf = Self::new(capacity)?;
        let get = |r: &mut R, len: usize| -> Result<DVector<T>> {
            let mut v = DVector::zeros(len);
            for i in 0..len {
                v[i] = lit(read_f64(r)?);
            }
            Ok(v)
        };
        for _ in 0..count {
            let x = get(&mut r, n)?;
            let t = read_u64(&mut r)? as usize;
            let control = get(&mut r, m)?;
            let v_bar = lit(read_f64(&mut r)?);
            let v_bar_x = get(&mut r, n)?;
            let x_after = get(&mut r, n)?;
            let t_after = read_u64(&mut r)? as usize;
            buf.push_many(std::iter::once(TOSample {
                state: TimeState::new(x, t),
                control,
                v_bar,
                v_bar_x,
                state_after: TimeState::new(x_after, t_after),
            }));
        }
        Ok((
            buf,
            DumpHeader {
                model,
                n,
                m,
                lookahead,
                count,
            },
        ))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DumpHeader {
    pub model: String,
    pub n: usize,
    pub m: usize,
    pub lookahead: usize,
    pub count: usize,
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}
