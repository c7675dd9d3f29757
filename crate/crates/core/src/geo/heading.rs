use serde::{Deserialize, Serialize};

use super::GeoError;
use crate::Scalar;

/// Heading mapped onto the unit circle: `s = sin(2*pi*h/360)`, `c = cos(2*pi*h/360)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncodedHeading<T> {
    pub s: T,
    pub c: T,
}

/// Cyclical encoding of a heading in degrees.
///
/// `None` is the "heading unavailable" sentinel and is rejected. Values
/// outside `[0, 360)` are accepted and wrap naturally.
pub fn encode_heading<T: Scalar>(heading: Option<T>) -> Result<EncodedHeading<T>, GeoError> {
    let h = heading.ok_or(GeoError::UnavailableHeading)?;
    let angle = T::TAU() * h / T::lit(360.0);
    Ok(EncodedHeading { s: angle.sin(), c: angle.cos() })
}

/// Length of the mean unit vector of a set of encoded headings.
///
/// 1 means all headings identical, values near 0 mean headings spread evenly
/// around the circle. Returns `None` for an empty input.
pub fn mean_resultant_length<T, I>(headings: I) -> Option<T>
where
    T: Scalar,
    I: IntoIterator<Item = EncodedHeading<T>>,
{
    let mut n = 0usize;
    let (mut s, mut c) = (T::zero(), T::zero());
    for h in headings {
        s += h.s;
        c += h.c;
        n += 1;
    }
    if n == 0 {
        return None;
    }
    let n = T::from_usize(n)?;
    let (ms, mc) = (s / n, c / n);
    Some((ms * ms + mc * mc).sqrt().min(T::one()))
}
