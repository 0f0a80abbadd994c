//! Event streams: validation, voxelization and the event spatial ratio.
//!
//! Timestamps are microseconds. Voxel bin assignment is normalized against the
//! fixed window bounds of the [`SensorGeometry`], never against the extrema of
//! the events actually present, so voxelizing two disjoint streams over the
//! same window and adding the grids gives the grid of their union.

mod format;

pub use format::{read_csv, read_events, read_evt1, write_csv, write_evt1, EVT1_MAGIC};

use crate::error::{Error, Result};

/// Lower bound applied to the event spatial ratio.
pub const DEFAULT_RATIO_FLOOR: f64 = 1e-4;

/// Default number of temporal voxel bins.
pub const DEFAULT_BINS: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Event {
    pub x: u16,
    pub y: u16,
    pub t: u64,
    pub p: i8,
}

impl Event {
    pub fn new(x: u16, y: u16, t: u64, p: i8) -> Self {
        Self { x, y, t, p }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SensorGeometry {
    pub width: u32,
    pub height: u32,
    pub window_start: u64,
    pub window_end: u64,
}

impl SensorGeometry {
    pub fn new(width: u32, height: u32, window_start: u64, window_end: u64) -> Result<Self> {
        let g = Self {
            width,
            height,
            window_start,
            window_end,
        };
        g.check()?;
        Ok(g)
    }

    fn check(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::BadGeometry(format!(
                "sensor size {}x{} must be positive",
                self.width, self.height
            )));
        }
        if self.window_start >= self.window_end {
            return Err(Error::BadGeometry(format!(
                "window [{}, {}] is empty",
                self.window_start, self.window_end
            )));
        }
        Ok(())
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn duration(&self) -> u64 {
        self.window_end - self.window_start
    }
}

/// A validated, time-sorted event stream. Only constructible through
/// [`validate_stream`], so every instance satisfies the bounds, polarity and
/// window invariants.
#[derive(Clone, Debug, PartialEq)]
pub struct EventStream {
    events: Vec<Event>,
    geometry: SensorGeometry,
}

impl EventStream {
    pub fn empty(geometry: SensorGeometry) -> Self {
        Self {
            events: Vec::new(),
            geometry,
        }
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn geometry(&self) -> &SensorGeometry {
        &self.geometry
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn into_events(self) -> Vec<Event> {
        self.events
    }
}

/// Validates raw events against `geometry` and sorts them by timestamp.
///
/// The sort is stable, so events sharing a timestamp keep their input order.
/// The first offending event (by input index) is reported.
pub fn validate_stream(raw_events: Vec<Event>, geometry: SensorGeometry) -> Result<EventStream> {
    geometry.check()?;
    for (index, e) in raw_events.iter().enumerate() {
        if e.p != 1 && e.p != -1 {
            return Err(Error::BadPolarity {
                index,
                polarity: e.p as i32,
            });
        }
        if e.x as u32 >= geometry.width || e.y as u32 >= geometry.height {
            return Err(Error::OutOfBounds {
                index,
                x: e.x as u32,
                y: e.y as u32,
                width: geometry.width,
                height: geometry.height,
            });
        }
        if e.t < geometry.window_start || e.t > geometry.window_end {
            return Err(Error::OutOfWindow {
                index,
                t: e.t,
                start: geometry.window_start,
                end: geometry.window_end,
            });
        }
    }
    let mut events = raw_events;
    events.sort_by_key(|e| e.t);
    Ok(EventStream { events, geometry })
}

/// Dense `bins x height x width` tensor of signed temporal deposits.
#[derive(Clone, Debug, PartialEq)]
pub struct VoxelGrid {
    pub bins: usize,
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

impl VoxelGrid {
    pub fn zeros(bins: usize, height: usize, width: usize) -> Self {
        Self {
            bins,
            height,
            width,
            values: vec![0.0; bins * height * width],
        }
    }

    #[inline]
    pub fn at(&self, bin: usize, y: usize, x: usize) -> f64 {
        self.values[(bin * self.height + y) * self.width + x]
    }

    /// Raw little-endian dump: `u16 bins, u16 height, u16 width, u16 0`
    /// followed by `bins*height*width` f32 values in bin-major, row-major order.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 4 * self.values.len());
        for d in [self.bins, self.height, self.width, 0] {
            out.extend_from_slice(&(d as u16).to_le_bytes());
        }
        for v in &self.values {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 {
            return Err(Error::parse("offset 0", "voxel header truncated"));
        }
        let dim = |i: usize| u16::from_le_bytes([bytes[2 * i], bytes[2 * i + 1]]) as usize;
        let (bins, height, width) = (dim(0), dim(1), dim(2));
        let n = bins * height * width;
        if bytes.len() != 8 + 4 * n {
            return Err(Error::parse(
                "offset 8",
                format!("expected {} payload bytes, found {}", 4 * n, bytes.len() - 8),
            ));
        }
        let values = bytes[8..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        Ok(Self {
            bins,
            height,
            width,
            values,
        })
    }
}

/// Bilinear temporal voxelization. Each event deposits
/// `p * max(0, 1 - |b - t*|)` into bin `b` at its pixel, where
/// `t* = (t - window_start) / (window_end - window_start) * (bins - 1)`.
pub fn voxelize(stream: &EventStream, bins: usize) -> Result<VoxelGrid> {
    if bins == 0 {
        return Err(Error::InvalidParameter("voxel bin count must be >= 1".into()));
    }
    let g = stream.geometry();
    let (h, w) = (g.height as usize, g.width as usize);
    let mut grid = VoxelGrid::zeros(bins, h, w);
    let span = g.duration() as f64;
    let last = (bins - 1) as f64;
    for e in stream.events() {
        let t_norm = (e.t - g.window_start) as f64 / span * last;
        let lower = t_norm.floor();
        let frac = t_norm - lower;
        let pixel = e.y as usize * w + e.x as usize;
        let p = e.p as f64;
        let b0 = lower as usize;
        grid.values[b0 * h * w + pixel] += p * (1.0 - frac);
        if frac > 0.0 && b0 + 1 < bins {
            grid.values[(b0 + 1) * h * w + pixel] += p * frac;
        }
    }
    Ok(grid)
}

/// Fraction of sensor pixels that fired at least once, clamped to
/// `[DEFAULT_RATIO_FLOOR, 1]`.
pub fn event_spatial_ratio(stream: &EventStream) -> f64 {
    event_spatial_ratio_with_floor(stream, DEFAULT_RATIO_FLOOR)
}

pub fn event_spatial_ratio_with_floor(stream: &EventStream, floor: f64) -> f64 {
    let g = stream.geometry();
    let mut seen = vec![false; g.pixel_count()];
    let mut distinct = 0usize;
    for e in stream.events() {
        let idx = e.y as usize * g.width as usize + e.x as usize;
        if !seen[idx] {
            seen[idx] = true;
            distinct += 1;
        }
    }
    (distinct as f64 / g.pixel_count() as f64).clamp(floor, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geo10() -> SensorGeometry {
        SensorGeometry::new(10, 10, 0, 100).unwrap()
    }

    #[test]
    fn empty_input_is_a_legal_stream() {
        let s = validate_stream(vec![], geo10()).unwrap();
        assert!(s.is_empty());
    }

    #[test]
    fn validation_sorts_by_time() {
        let s = validate_stream(vec![Event::new(3, 2, 10, 1), Event::new(1, 1, 5, -1)], geo10()).unwrap();
        assert_eq!(s.events(), &[Event::new(1, 1, 5, -1), Event::new(3, 2, 10, 1)]);
    }

    #[test]
    fn sort_is_stable_on_ties() {
        let raw = vec![
            Event::new(4, 0, 7, 1),
            Event::new(1, 0, 3, 1),
            Event::new(2, 0, 7, -1),
            Event::new(3, 0, 7, 1),
        ];
        let s = validate_stream(raw, geo10()).unwrap();
        let xs: Vec<u16> = s.events().iter().map(|e| e.x).collect();
        assert_eq!(xs, vec![1, 4, 2, 3]);
    }

    #[test]
    fn out_of_bounds_reports_index() {
        let err = validate_stream(vec![Event::new(12, 0, 5, 1)], geo10()).unwrap_err();
        assert!(matches!(err, Error::OutOfBounds { index: 0, .. }));
        let err = validate_stream(vec![Event::new(0, 0, 5, 1), Event::new(0, 10, 5, 1)], geo10()).unwrap_err();
        assert!(matches!(err, Error::OutOfBounds { index: 1, .. }));
    }

    #[test]
    fn bad_polarity_and_window() {
        let err = validate_stream(vec![Event::new(0, 0, 5, 0)], geo10()).unwrap_err();
        assert!(matches!(err, Error::BadPolarity { index: 0, polarity: 0 }));
        let err = validate_stream(vec![Event::new(0, 0, 101, 1)], geo10()).unwrap_err();
        assert!(matches!(err, Error::OutOfWindow { index: 0, .. }));
    }

    #[test]
    fn geometry_rejects_degenerate_window() {
        assert!(SensorGeometry::new(10, 10, 5, 5).is_err());
        assert!(SensorGeometry::new(0, 10, 0, 5).is_err());
    }

    #[test]
    fn empty_stream_voxelizes_to_zero() {
        let g = voxelize(&EventStream::empty(geo10()), 5).unwrap();
        assert_eq!((g.bins, g.height, g.width), (5, 10, 10));
        assert!(g.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn event_at_window_start_lands_in_bin_zero() {
        let s = validate_stream(vec![Event::new(3, 7, 0, 1)], geo10()).unwrap();
        let g = voxelize(&s, 5).unwrap();
        assert_eq!(g.at(0, 7, 3), 1.0);
        assert_eq!(g.values.iter().filter(|&&v| v != 0.0).count(), 1);
    }

    #[test]
    fn event_at_window_end_lands_in_last_bin() {
        let s = validate_stream(vec![Event::new(0, 0, 100, -1)], geo10()).unwrap();
        let g = voxelize(&s, 5).unwrap();
        assert_eq!(g.at(4, 0, 0), -1.0);
    }

    #[test]
    fn single_bin_collects_everything() {
        let s = validate_stream(vec![Event::new(0, 0, 30, 1), Event::new(0, 0, 90, 1)], geo10()).unwrap();
        let g = voxelize(&s, 1).unwrap();
        assert_eq!(g.at(0, 0, 0), 2.0);
    }

    #[test]
    fn zero_bins_rejected() {
        assert!(voxelize(&EventStream::empty(geo10()), 0).is_err());
    }

    #[test]
    fn voxel_dump_round_trips() {
        let s = validate_stream(vec![Event::new(2, 3, 37, 1)], geo10()).unwrap();
        let g = voxelize(&s, 3).unwrap();
        let bytes = g.to_bytes();
        assert_eq!(&bytes[..8], &[3, 0, 10, 0, 10, 0, 0, 0]);
        let back = VoxelGrid::from_bytes(&bytes).unwrap();
        for (a, b) in back.values.iter().zip(&g.values) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn ratio_examples() {
        assert_eq!(event_spatial_ratio(&EventStream::empty(geo10())), 1e-4);
        let five: Vec<Event> = (0..5).map(|i| Event::new(i, 0, 1, 1)).collect();
        let s = validate_stream(five, geo10()).unwrap();
        assert!((event_spatial_ratio(&s) - 0.05).abs() < 1e-15);
        let same = vec![Event::new(2, 2, 1, 1); 3];
        let s = validate_stream(same, geo10()).unwrap();
        assert!((event_spatial_ratio(&s) - 0.01).abs() < 1e-15);
    }
}
