//! Floating-point element type shared by the network, objectives and localization code.

use std::fmt::{Debug, Display};
use std::io::{self, Read, Write};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, NumCast};

/// Real scalar: `f32` for training, `f64` for gradient checking.
pub trait Scalar:
    Float
    + FromPrimitive
    + NumCast
    + LinalgScalar
    + ScalarOperand
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Tag written into checkpoints.
    const DTYPE: &'static str;

    fn from_f64_lossy(v: f64) -> Self {
        <Self as NumCast>::from(v).expect("finite f64 converts to any float")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().expect("float converts to f64")
    }

    fn from_count(n: usize) -> Self {
        Self::from_f64_lossy(n as f64)
    }

    fn write_le<W: Write>(self, w: &mut W) -> io::Result<()>;
    fn read_le<R: Read>(r: &mut R) -> io::Result<Self>;
}

impl Scalar for f32 {
    const DTYPE: &'static str = "f32";

    fn write_le<W: Write>(self, w: &mut W) -> io::Result<()> {
        w.write_f32::<LittleEndian>(self)
    }

    fn read_le<R: Read>(r: &mut R) -> io::Result<Self> {
        r.read_f32::<LittleEndian>()
    }
}

impl Scalar for f64 {
    const DTYPE: &'static str = "f64";

    fn write_le<W: Write>(self, w: &mut W) -> io::Result<()> {
        w.write_f64::<LittleEndian>(self)
    }

    fn read_le<R: Read>(r: &mut R) -> io::Result<Self> {
        r.read_f64::<LittleEndian>()
    }
}
