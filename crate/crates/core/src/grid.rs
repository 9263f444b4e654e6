//! Raster and geodesy primitives shared by every other module.
//!
//! Distances use the flat approximation of 69 miles per degree of latitude and
//! `69 * cos(lat)` miles per degree of longitude. The same constant drives the
//! 64-bit pixel hash so that windows, rasterisation and deduplication agree on
//! what "one mile" means.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MILES_PER_DEGREE: f64 = 69.0;
pub const NUM_MINERALS: usize = 10;

const COS_EPS: f64 = 1e-12;

/// Mineral layers in their fixed channel order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Mineral {
    Gold,
    Silver,
    Zinc,
    Lead,
    Copper,
    Nickel,
    Iron,
    Uranium,
    Tungsten,
    Manganese,
}

impl Mineral {
    pub const ALL: [Mineral; NUM_MINERALS] = [
        Mineral::Gold,
        Mineral::Silver,
        Mineral::Zinc,
        Mineral::Lead,
        Mineral::Copper,
        Mineral::Nickel,
        Mineral::Iron,
        Mineral::Uranium,
        Mineral::Tungsten,
        Mineral::Manganese,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Mineral> {
        Self::ALL.get(index).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Mineral::Gold => "Gold",
            Mineral::Silver => "Silver",
            Mineral::Zinc => "Zinc",
            Mineral::Lead => "Lead",
            Mineral::Copper => "Copper",
            Mineral::Nickel => "Nickel",
            Mineral::Iron => "Iron",
            Mineral::Uranium => "Uranium",
            Mineral::Tungsten => "Tungsten",
            Mineral::Manganese => "Manganese",
        }
    }
}

impl std::fmt::Display for Mineral {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// WGS-84 position in decimal degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lon: f64,
    pub lat: f64,
}

impl GeoPoint {
    pub const fn new(lon: f64, lat: f64) -> Self {
        Self { lon, lat }
    }

    /// Offset by a displacement in miles. The east component is converted at
    /// the destination latitude, so points on one parallel are spaced exactly
    /// like the longitude cells of [`pixel_hash`].
    pub fn offset_miles(self, east_mi: f64, north_mi: f64) -> GeoPoint {
        let lat = self.lat + north_mi / MILES_PER_DEGREE;
        GeoPoint { lon: self.lon + east_mi / (MILES_PER_DEGREE * lat.to_radians().cos()), lat }
    }

    /// Displacement `(east, north)` in miles from `reference` to `self`; the
    /// inverse of [`GeoPoint::offset_miles`].
    pub fn miles_from(self, reference: GeoPoint) -> (f64, f64) {
        let east = (self.lon - reference.lon) * MILES_PER_DEGREE * self.lat.to_radians().cos();
        let north = (self.lat - reference.lat) * MILES_PER_DEGREE;
        (east, north)
    }
}

/// Longitude/latitude bounding box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub west: f64,
    pub south: f64,
    pub east: f64,
    pub north: f64,
}

impl Region {
    pub fn new(west: f64, south: f64, east: f64, north: f64) -> Result<Self> {
        let all_finite = [west, south, east, north].iter().all(|v| v.is_finite());
        if !all_finite || west >= east || south >= north {
            return Err(Error::InvalidParameter(format!(
                "region must satisfy west < east and south < north, got ({west}, {south}, {east}, {north})"
            )));
        }
        Ok(Self { west, south, east, north })
    }

    /// Region of the given size in miles whose southwest corner is `sw`. The
    /// longitude extent is converted at the southern latitude.
    pub fn from_miles(sw: GeoPoint, width_mi: f64, height_mi: f64) -> Result<Self> {
        let east = sw.lon + width_mi / (MILES_PER_DEGREE * sw.lat.to_radians().cos());
        Region::new(sw.lon, sw.lat, east, sw.lat + height_mi / MILES_PER_DEGREE)
    }

    pub fn southwest(&self) -> GeoPoint {
        GeoPoint::new(self.west, self.south)
    }

    pub fn width_mi(&self) -> f64 {
        (self.east - self.west) * MILES_PER_DEGREE * self.south.to_radians().cos()
    }

    pub fn height_mi(&self) -> f64 {
        (self.north - self.south) * MILES_PER_DEGREE
    }

    /// Area in square miles, using the mid latitude for the longitude scale.
    pub fn area_mi2(&self) -> f64 {
        let mid = 0.5 * (self.south + self.north);
        (self.east - self.west) * MILES_PER_DEGREE * mid.to_radians().cos() * self.height_mi()
    }

    pub fn contains(&self, p: GeoPoint) -> bool {
        p.lon >= self.west && p.lon < self.east && p.lat >= self.south && p.lat < self.north
    }
}

impl std::str::FromStr for Region {
    type Err = Error;

    /// Parses `lon1,lat1,lon2,lat2`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::InvalidParameter(format!("bad region {s:?}: {e}")))?;
        match parts.as_slice() {
            &[lon1, lat1, lon2, lat2] => {
                Region::new(lon1.min(lon2), lat1.min(lat2), lon1.max(lon2), lat1.max(lat2))
            }
            _ => Err(Error::InvalidParameter(format!("region needs 4 numbers, got {s:?}"))),
        }
    }
}

/// Placement of a square window: southwest pixel centre, side in pixels and
/// pixel pitch in miles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub origin: GeoPoint,
    pub side_px: usize,
    pub resolution_mi: f64,
}

impl WindowSpec {
    pub fn new(origin: GeoPoint, side_px: usize, resolution_mi: f64) -> Self {
        Self { origin, side_px, resolution_mi }
    }

    /// Full-size window: 50 px at 1 mi.
    pub fn standard(origin: GeoPoint) -> Self {
        Self::new(origin, 50, 1.0)
    }

    /// Centre of pixel `(row, col)`; rows advance north, columns east.
    pub fn pixel_center(&self, row: usize, col: usize) -> GeoPoint {
        self.origin
            .offset_miles(col as f64 * self.resolution_mi, row as f64 * self.resolution_mi)
    }

    /// Geometric centre of the pixel-centre lattice.
    pub fn center(&self) -> GeoPoint {
        let half = (self.side_px as f64 - 1.0) * 0.5 * self.resolution_mi;
        self.origin.offset_miles(half, half)
    }

    /// Pixel containing `p`, using half-open squares centred on the pixel
    /// centres.
    pub fn locate(&self, p: GeoPoint) -> Option<(usize, usize)> {
        let (east, north) = p.miles_from(self.origin);
        let col = (east / self.resolution_mi + 0.5).floor();
        let row = (north / self.resolution_mi + 0.5).floor();
        let side = self.side_px as f64;
        if row >= 0.0 && row < side && col >= 0.0 && col < side {
            Some((row as usize, col as usize))
        } else {
            None
        }
    }

    pub fn pixels(&self) -> usize {
        self.side_px * self.side_px
    }
}

/// Dense channel-major raster `[channels, side, side]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Raster<T> {
    pub channels: usize,
    pub side: usize,
    pub data: Vec<T>,
}

impl<T: Copy + Default> Raster<T> {
    pub fn zeros(channels: usize, side: usize) -> Self {
        Self { channels, side, data: vec![T::default(); channels * side * side] }
    }

    pub fn from_vec(channels: usize, side: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != channels * side * side {
            return Err(Error::ShapeMismatch {
                expected: vec![channels, side, side],
                found: vec![data.len()],
            });
        }
        Ok(Self { channels, side, data })
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.channels, self.side, self.side]
    }

    #[inline]
    pub fn offset(&self, channel: usize, row: usize, col: usize) -> usize {
        (channel * self.side + row) * self.side + col
    }

    #[inline]
    pub fn get(&self, channel: usize, row: usize, col: usize) -> T {
        self.data[self.offset(channel, row, col)]
    }

    #[inline]
    pub fn set(&mut self, channel: usize, row: usize, col: usize, value: T) {
        let i = self.offset(channel, row, col);
        self.data[i] = value;
    }

    pub fn layer(&self, channel: usize) -> &[T] {
        let n = self.side * self.side;
        &self.data[channel * n..(channel + 1) * n]
    }

    pub fn layer_mut(&mut self, channel: usize) -> &mut [T] {
        let n = self.side * self.side;
        &mut self.data[channel * n..(channel + 1) * n]
    }
}

/// One square tile of stacked data layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextWindow {
    pub spec: WindowSpec,
    /// Binary presence flags, `[NUM_MINERALS, side, side]`.
    pub minerals: Raster<u8>,
    pub covariates: Option<Raster<f32>>,
    pub agronomic: Option<Raster<f32>>,
}

impl ContextWindow {
    pub fn empty(spec: WindowSpec) -> Self {
        Self {
            spec,
            minerals: Raster::zeros(NUM_MINERALS, spec.side_px),
            covariates: None,
            agronomic: None,
        }
    }

    pub fn side(&self) -> usize {
        self.spec.side_px
    }

    pub fn covariate_channels(&self) -> usize {
        self.covariates.as_ref().map_or(0, |c| c.channels)
    }

    pub fn resource_count(&self) -> usize {
        self.minerals.data.iter().map(|&v| v as usize).sum()
    }
}

/// Pixel-centre coordinates in row-major order.
pub fn window_pixel_coords(spec: &WindowSpec) -> Vec<GeoPoint> {
    let side = spec.side_px;
    let mut out = Vec::with_capacity(side * side);
    for row in 0..side {
        for col in 0..side {
            out.push(spec.pixel_center(row, col));
        }
    }
    out
}

/// 64-bit key of the 1-mile cell containing a point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PixelKey(pub i64);

impl PixelKey {
    /// Composite key for a `(longitude index, latitude index)` pair.
    pub fn from_indices(lon_index: i64, lat_index: i64) -> Self {
        PixelKey(lon_index.wrapping_shl(32).wrapping_add(lat_index))
    }
}

/// Cell indices `(floor(lon / dlon(lat)), floor(lat / dlat))` with
/// `dlat = 1/69` degrees and `dlon(lat) = 1 / (69 cos lat)` degrees.
pub fn cell_indices(p: GeoPoint) -> Result<(i64, i64)> {
    let cos = p.lat.to_radians().cos();
    if !p.lon.is_finite() || !p.lat.is_finite() || p.lat.abs() >= 89.0 || cos <= COS_EPS {
        return Err(Error::Domain { lon: p.lon, lat: p.lat });
    }
    let dlat = 1.0 / MILES_PER_DEGREE;
    let dlon = 1.0 / (MILES_PER_DEGREE * cos);
    Ok(((p.lon / dlon).floor() as i64, (p.lat / dlat).floor() as i64))
}

pub fn pixel_hash(p: GeoPoint) -> Result<PixelKey> {
    let (lon_index, lat_index) = cell_indices(p)?;
    Ok(PixelKey::from_indices(lon_index, lat_index))
}

/// Streaming duplicate remover. Keeps the first occurrence of every 1-mile
/// cell and zeroes the mineral channels of later ones. The seen-set persists
/// across calls, so a stream can be processed in several chunks.
#[derive(Debug, Default, Clone)]
pub struct Deduplicator {
    seen: HashSet<PixelKey>,
    zeroed: usize,
}

impl Deduplicator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn seen(&self) -> usize {
        self.seen.len()
    }

    /// Number of pixels whose mineral channels were cleared so far.
    pub fn zeroed(&self) -> usize {
        self.zeroed
    }

    pub fn process(&mut self, mut tile: ContextWindow) -> Result<ContextWindow> {
        let spec = tile.spec;
        let side = spec.side_px;
        for row in 0..side {
            for col in 0..side {
                let key = pixel_hash(spec.pixel_center(row, col))?;
                if !self.seen.insert(key) {
                    self.zeroed += 1;
                    for layer in 0..NUM_MINERALS {
                        tile.minerals.set(layer, row, col, 0);
                    }
                }
            }
        }
        Ok(tile)
    }
}

/// Per tile, row-major flags marking the pixels that are the first
/// occurrence of their cell in stream order. These are exactly the pixels a
/// [`Deduplicator`] leaves untouched.
pub fn first_seen_pixels(tiles: &[&ContextWindow]) -> Result<Vec<Vec<bool>>> {
    let mut seen = HashSet::new();
    tiles
        .iter()
        .map(|t| {
            let spec = t.spec;
            let side = spec.side_px;
            let mut keep = Vec::with_capacity(side * side);
            for row in 0..side {
                for col in 0..side {
                    keep.push(seen.insert(pixel_hash(spec.pixel_center(row, col))?));
                }
            }
            Ok(keep)
        })
        .collect()
}

/// Runs a sequence of tiles through `state`, returning cleaned tiles in order.
pub fn dedup_stream<I>(tiles: I, state: &mut Deduplicator) -> Result<Vec<ContextWindow>>
where
    I: IntoIterator<Item = ContextWindow>,
{
    tiles.into_iter().map(|t| state.process(t)).collect()
}
