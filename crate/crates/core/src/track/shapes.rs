//! Synthetic closed tracks used for the bundled maps.

use std::f64::consts::PI;

use super::{TrackCenterline, TrackError};
use crate::geometry::Point2;

/// Stadium: two straights of length `straight` joined by semicircles of
/// `radius`, driven counter-clockwise, sampled every ~`spacing` metres.
pub fn oval(
    straight: f64,
    radius: f64,
    half_width: f64,
    spacing: f64,
) -> Result<TrackCenterline, TrackError> {
    let arc = PI * radius;
    let perimeter = 2.0 * straight + 2.0 * arc;
    let n = (perimeter / spacing).round().max(3.0) as usize;
    let h = straight / 2.0;
    let centers = (0..n)
        .map(|i| {
            let s = perimeter * i as f64 / n as f64;
            if s < straight {
                Point2::new(-h + s, -radius)
            } else if s < straight + arc {
                let a = -PI / 2.0 + (s - straight) / radius;
                Point2::new(h + radius * a.cos(), radius * a.sin())
            } else if s < 2.0 * straight + arc {
                Point2::new(h - (s - straight - arc), radius)
            } else {
                let a = PI / 2.0 + (s - 2.0 * straight - arc) / radius;
                Point2::new(-h + radius * a.cos(), radius * a.sin())
            }
        })
        .collect();
    TrackCenterline::new(centers, vec![half_width; n], vec![half_width; n])
}

/// Polar lobed loop `r(φ) = base + amplitude·sin(lobes·φ)`, resampled to
/// uniform arc-length spacing.
pub fn squiggle(
    base: f64,
    amplitude: f64,
    lobes: u32,
    half_width: f64,
    spacing: f64,
) -> Result<TrackCenterline, TrackError> {
    const DENSE: usize = 20_000;
    let dense: Vec<Point2> = (0..=DENSE)
        .map(|i| {
            let phi = 2.0 * PI * i as f64 / DENSE as f64;
            let r = base + amplitude * (f64::from(lobes) * phi).sin();
            Point2::new(r * phi.cos(), r * phi.sin())
        })
        .collect();
    let mut cum = vec![0.0];
    for w in dense.windows(2) {
        cum.push(cum.last().unwrap() + w[0].distance(w[1]));
    }
    let perimeter = *cum.last().unwrap();
    let n = (perimeter / spacing).round().max(3.0) as usize;
    let mut centers = Vec::with_capacity(n);
    let mut seg = 0;
    for i in 0..n {
        let s = perimeter * i as f64 / n as f64;
        while cum[seg + 1] < s {
            seg += 1;
        }
        let t = (s - cum[seg]) / (cum[seg + 1] - cum[seg]);
        centers.push(dense[seg].lerp(dense[seg + 1], t));
    }
    TrackCenterline::new(centers, vec![half_width; n], vec![half_width; n])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oval_is_uniform_and_ccw() {
        let t = oval(8.0, 3.0, 1.1, 0.1).unwrap();
        let n = t.len();
        let perim = 16.0 + 6.0 * PI;
        assert_eq!(n, (perim / 0.1).round() as usize);
        let mut area = 0.0;
        for i in 0..n {
            let a = t.centers[i];
            let b = t.centers[(i + 1) % n];
            area += a.cross(b) / 2.0;
            // chords shorter than arc spacing, never longer
            assert!(a.distance(b) <= perim / n as f64 + 1e-12);
        }
        assert!(area > 0.0);
    }

    #[test]
    fn squiggle_spacing_is_close_to_requested() {
        let t = squiggle(6.0, 1.0, 3, 1.1, 0.1).unwrap();
        let n = t.len();
        for i in 0..n {
            let d = t.centers[i].distance(t.centers[(i + 1) % n]);
            assert!((d - 0.1).abs() < 2e-3, "{d}");
        }
    }
}
