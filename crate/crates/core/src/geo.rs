//! Spatial grid bucketing, static-map retrieval, and the persistent
//! grid-keyed location-context cache.
//!
//! Coordinates are bucketed into 100 m × 100 m cells under a local
//! equirectangular projection anchored at the trace's reference latitude.
//! Every point in a cell maps to the same map image and shares the cached
//! location-context text, so the expensive vision calls run at most once per
//! cell.

use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use thiserror::Error;

/// Meters per degree of latitude (and of longitude at the equator).
const METERS_PER_DEGREE: f64 = 111_320.0;
/// Grid cell edge in meters.
pub const CELL_SIZE_M: f64 = 100.0;
/// Fixed static-map image edge in pixels.
pub const MAP_SIZE_PX: u32 = 500;
/// Fixed static-map zoom level; covers roughly 250 m × 250 m.
pub const MAP_ZOOM: u32 = 18;

#[derive(Debug, Error)]
pub enum GeoError {
    #[error("invalid coordinate ({lat}, {lon})")]
    InvalidCoordinate { lat: f64, lon: f64 },
    #[error("no map fixture for grid key {0}")]
    MissingFixture(String),
    #[error("map provider unavailable: {0}")]
    ProviderUnavailable(String),
    #[error("cache storage: {0}")]
    StorageIo(#[from] std::io::Error),
}

/// 100 m grid cell identifier, rendered as `g:{ix}:{iy}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GridKey {
    pub ix: i64,
    pub iy: i64,
}

impl fmt::Display for GridKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "g:{}:{}", self.ix, self.iy)
    }
}

impl GridKey {
    pub fn parse(text: &str) -> Option<GridKey> {
        let rest = text.strip_prefix("g:")?;
        let (ix, iy) = rest.split_once(':')?;
        Some(GridKey {
            ix: ix.parse().ok()?,
            iy: iy.parse().ok()?,
        })
    }
}

/// Equirectangular projection anchored at a per-trace reference latitude.
/// A local metric projection keeps cells an exact 100 m near the trace.
#[derive(Debug, Clone, Copy)]
pub struct Projection {
    cos_ref_lat: f64,
}

impl Projection {
    pub fn new(reference_lat_deg: f64) -> Self {
        Projection {
            cos_ref_lat: reference_lat_deg.to_radians().cos(),
        }
    }

    fn check(lat: f64, lon: f64) -> Result<(), GeoError> {
        let ok = lat.is_finite()
            && lon.is_finite()
            && (-90.0..=90.0).contains(&lat)
            && lon > -180.0
            && lon <= 180.0;
        if ok {
            Ok(())
        } else {
            Err(GeoError::InvalidCoordinate { lat, lon })
        }
    }

    /// Projected position in meters.
    pub fn project(&self, lat: f64, lon: f64) -> Result<(f64, f64), GeoError> {
        Self::check(lat, lon)?;
        Ok((
            lon * METERS_PER_DEGREE * self.cos_ref_lat,
            lat * METERS_PER_DEGREE,
        ))
    }

    pub fn grid_key(&self, lat: f64, lon: f64) -> Result<GridKey, GeoError> {
        let (x, y) = self.project(lat, lon)?;
        Ok(GridKey {
            ix: (x / CELL_SIZE_M).floor() as i64,
            iy: (y / CELL_SIZE_M).floor() as i64,
        })
    }

    /// Geographic coordinates of a cell's centroid.
    pub fn cell_centroid(&self, key: GridKey) -> (f64, f64) {
        let x = (key.ix as f64 + 0.5) * CELL_SIZE_M;
        let y = (key.iy as f64 + 0.5) * CELL_SIZE_M;
        let lat = y / METERS_PER_DEGREE;
        let lon = if self.cos_ref_lat.abs() < 1e-12 {
            0.0
        } else {
            x / (METERS_PER_DEGREE * self.cos_ref_lat)
        };
        (lat, lon)
    }
}

/// A fully specified static-map request. Size and zoom are fixed; the center
/// is snapped to the cell centroid so every point in a cell fetches the
/// identical image.
#[derive(Debug, Clone, PartialEq)]
pub struct MapRequest {
    pub key: GridKey,
    pub center: (f64, f64),
    pub size_px: (u32, u32),
    pub zoom: u32,
}

pub fn build_map_request(
    projection: &Projection,
    lat: f64,
    lon: f64,
) -> Result<MapRequest, GeoError> {
    let key = projection.grid_key(lat, lon)?;
    Ok(MapRequest {
        key,
        center: projection.cell_centroid(key),
        size_px: (MAP_SIZE_PX, MAP_SIZE_PX),
        zoom: MAP_ZOOM,
    })
}

/// Source of map raster bytes.
pub trait MapProvider: Send + Sync {
    fn fetch(&self, request: &MapRequest) -> Result<Vec<u8>, GeoError>;
}

/// Replay provider: one image file per grid key in a directory, named by the
/// rendered key (a `.png` suffix is also accepted).
pub struct FixtureMapProvider {
    dir: PathBuf,
}

impl FixtureMapProvider {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        FixtureMapProvider { dir: dir.into() }
    }

    pub fn fixture_path(&self, key: GridKey) -> Option<PathBuf> {
        let bare = self.dir.join(key.to_string());
        if bare.is_file() {
            return Some(bare);
        }
        let png = self.dir.join(format!("{key}.png"));
        png.is_file().then_some(png)
    }
}

impl MapProvider for FixtureMapProvider {
    fn fetch(&self, request: &MapRequest) -> Result<Vec<u8>, GeoError> {
        let path = self
            .fixture_path(request.key)
            .ok_or_else(|| GeoError::MissingFixture(request.key.to_string()))?;
        Ok(std::fs::read(path)?)
    }
}

/// Live provider hitting a static-map HTTP endpoint. Endpoint and style come
/// from config; the API secret from an environment variable.
pub struct LiveMapProvider {
    endpoint: String,
    style: Option<String>,
    api_key: Option<String>,
    retries: u32,
    backoff_ms: u64,
    client: reqwest::blocking::Client,
}

impl LiveMapProvider {
    pub fn new(
        endpoint: String,
        style: Option<String>,
        api_key: Option<String>,
        retries: u32,
        backoff_ms: u64,
    ) -> Self {
        LiveMapProvider {
            endpoint,
            style,
            api_key,
            retries,
            backoff_ms,
            client: reqwest::blocking::Client::new(),
        }
    }

    fn url(&self, request: &MapRequest) -> String {
        let mut url = format!(
            "{}?center={:.6},{:.6}&zoom={}&size={}x{}",
            self.endpoint,
            request.center.0,
            request.center.1,
            request.zoom,
            request.size_px.0,
            request.size_px.1
        );
        if let Some(style) = &self.style {
            url.push_str("&style=");
            url.push_str(style);
        }
        if let Some(key) = &self.api_key {
            url.push_str("&key=");
            url.push_str(key);
        }
        url
    }
}

fn looks_like_raster(bytes: &[u8]) -> bool {
    bytes.starts_with(b"\x89PNG\r\n\x1a\n")
        || bytes.starts_with(&[0xFF, 0xD8, 0xFF])
        || bytes.starts_with(b"GIF8")
        || bytes.starts_with(b"RIFF")
}

impl MapProvider for LiveMapProvider {
    fn fetch(&self, request: &MapRequest) -> Result<Vec<u8>, GeoError> {
        let url = self.url(request);
        let mut last_err = String::new();
        for attempt in 0..=self.retries {
            if attempt > 0 {
                std::thread::sleep(std::time::Duration::from_millis(
                    self.backoff_ms << (attempt - 1),
                ));
            }
            match self.client.get(&url).send() {
                Ok(resp) if resp.status().is_success() => {
                    let bytes = resp
                        .bytes()
                        .map_err(|e| GeoError::ProviderUnavailable(e.to_string()))?
                        .to_vec();
                    if !looks_like_raster(&bytes) {
                        return Err(GeoError::ProviderUnavailable(
                            "response is not a raster image".into(),
                        ));
                    }
                    return Ok(bytes);
                }
                Ok(resp) => {
                    last_err = format!("http status {}", resp.status());
                    if resp.status().is_client_error() {
                        break;
                    }
                }
                Err(e) => last_err = e.to_string(),
            }
        }
        Err(GeoError::ProviderUnavailable(last_err))
    }
}

fn escape_cache_text(text: &str) -> String {
    text.replace('\\', "\\\\")
        .replace('\t', "\\t")
        .replace('\n', "\\n")
}

fn unescape_cache_text(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut chars = text.chars();
    while let Some(c) = chars.next() {
        if c == '\\' {
            match chars.next() {
                Some('t') => out.push('\t'),
                Some('n') => out.push('\n'),
                Some('\\') => out.push('\\'),
                Some(other) => {
                    out.push('\\');
                    out.push(other);
                }
                None => out.push('\\'),
            }
        } else {
            out.push(c);
        }
    }
    out
}

/// Persistent grid-key → location-context store.
///
/// On disk: UTF-8 lines of `key<TAB>context` with tab/newline escaped in the
/// context text. Writes append; opening replays the log (last writer wins)
/// and rewrites the file compacted when duplicates are found.
pub struct ContextCache {
    path: PathBuf,
    entries: HashMap<GridKey, String>,
}

impl ContextCache {
    pub fn open(path: impl Into<PathBuf>) -> Result<Self, GeoError> {
        let path = path.into();
        let mut entries = HashMap::new();
        let mut lines_read = 0usize;
        if path.exists() {
            let file = std::fs::File::open(&path)?;
            for line in std::io::BufReader::new(file).lines() {
                let line = line?;
                if line.is_empty() {
                    continue;
                }
                lines_read += 1;
                if let Some((key_text, value)) = line.split_once('\t') {
                    if let Some(key) = GridKey::parse(key_text) {
                        entries.insert(key, unescape_cache_text(value));
                    }
                }
            }
        }
        let cache = ContextCache { path, entries };
        if lines_read > cache.entries.len() {
            cache.rewrite_compacted()?;
        }
        Ok(cache)
    }

    fn rewrite_compacted(&self) -> Result<(), GeoError> {
        let mut keys: Vec<&GridKey> = self.entries.keys().collect();
        keys.sort();
        let mut file = std::fs::File::create(&self.path)?;
        for key in keys {
            writeln!(file, "{key}\t{}", escape_cache_text(&self.entries[key]))?;
        }
        Ok(())
    }

    pub fn get(&self, key: GridKey) -> Option<&str> {
        self.entries.get(&key).map(String::as_str)
    }

    pub fn put(&mut self, key: GridKey, context: &str) -> Result<(), GeoError> {
        let mut file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)?;
        writeln!(file, "{key}\t{}", escape_cache_text(context))?;
        self.entries.insert(key, context.to_string());
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Raw line count of the backing file (may exceed `len` before compaction).
    pub fn file_lines(&self) -> Result<usize, GeoError> {
        if !self.path.exists() {
            return Ok(0);
        }
        let file = std::fs::File::open(&self.path)?;
        Ok(std::io::BufReader::new(file).lines().count())
    }

    pub fn clear(&mut self) -> Result<(), GeoError> {
        self.entries.clear();
        if self.path.exists() {
            std::fs::File::create(&self.path)?;
        }
        Ok(())
    }
}

/// Within-run memo that coalesces concurrent lookups for one cell.
///
/// Each key resolves at most once per run: concurrent callers for the same
/// key block on the cell's own lock while the first caller computes, and
/// failed or hallucinated lookups are remembered as absent rather than
/// retried. Distinct keys proceed independently.
type CellSlot<T> = Arc<Mutex<Option<Option<T>>>>;

pub struct CellMemo<T = String> {
    cells: Mutex<HashMap<GridKey, CellSlot<T>>>,
}

impl<T: Clone> CellMemo<T> {
    pub fn new() -> Self {
        CellMemo {
            cells: Mutex::new(HashMap::new()),
        }
    }

    /// Returns the memoized value for `key`, computing it with `f` on first
    /// use. `f` runs under the cell's lock, never more than once per key.
    pub fn get_or_compute(&self, key: GridKey, f: impl FnOnce() -> Option<T>) -> Option<T> {
        let cell = {
            let mut map = self.cells.lock().unwrap();
            map.entry(key)
                .or_insert_with(|| Arc::new(Mutex::new(None)))
                .clone()
        };
        let mut slot = cell.lock().unwrap();
        if slot.is_none() {
            *slot = Some(f());
        }
        slot.as_ref().unwrap().clone()
    }
}

impl<T: Clone> Default for CellMemo<T> {
    fn default() -> Self {
        Self::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn origin_maps_to_zero_cell() {
        let proj = Projection::new(0.0);
        assert_eq!(proj.grid_key(0.0, 0.0).unwrap().to_string(), "g:0:0");
    }

    #[test]
    fn nearby_points_share_a_cell() {
        let proj = Projection::new(0.0);
        // 10 m apart east-west at the equator: 10 / 111320 degrees.
        let a = proj.grid_key(0.0, 40.0 / METERS_PER_DEGREE).unwrap();
        let b = proj.grid_key(0.0, 50.0 / METERS_PER_DEGREE).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn millidegree_crosses_cell_boundary() {
        let proj = Projection::new(0.0);
        // 0.001 deg lon at the equator projects to 111.32 m.
        let key = proj.grid_key(0.0, 0.001).unwrap();
        assert_eq!(key, GridKey { ix: 1, iy: 0 });
    }

    #[test]
    fn rejects_invalid_coordinates() {
        let proj = Projection::new(0.0);
        assert!(matches!(
            proj.grid_key(91.0, 0.0),
            Err(GeoError::InvalidCoordinate { .. })
        ));
        assert!(matches!(
            proj.grid_key(f64::NAN, 0.0),
            Err(GeoError::InvalidCoordinate { .. })
        ));
    }

    #[test]
    fn map_request_snaps_to_centroid() {
        let proj = Projection::new(0.0);
        let r1 = build_map_request(&proj, 0.0, 10.0 / METERS_PER_DEGREE).unwrap();
        let r2 = build_map_request(&proj, 0.0005, 90.0 / METERS_PER_DEGREE).unwrap();
        assert_eq!(r1, r2);
        assert_eq!(r1.size_px, (500, 500));
        assert_eq!(r1.zoom, 18);
        let (_, lon) = r1.center;
        assert!((lon * METERS_PER_DEGREE - 50.0).abs() < 1e-6);
    }

    #[test]
    fn fixture_provider_resolves_by_key() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("g:1:2.png"), b"fakepng").unwrap();
        let provider = FixtureMapProvider::new(dir.path());
        let req = MapRequest {
            key: GridKey { ix: 1, iy: 2 },
            center: (0.0, 0.0),
            size_px: (500, 500),
            zoom: 18,
        };
        assert_eq!(provider.fetch(&req).unwrap(), b"fakepng");

        let missing = MapRequest {
            key: GridKey { ix: 9, iy: 9 },
            ..req
        };
        match provider.fetch(&missing) {
            Err(GeoError::MissingFixture(key)) => assert_eq!(key, "g:9:9"),
            other => panic!("expected MissingFixture, got {other:?}"),
        }
    }

    #[test]
    fn cache_round_trip_and_restart() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.tsv");
        let key = GridKey { ix: 3, iy: -4 };
        {
            let mut cache = ContextCache::open(&path).unwrap();
            assert!(cache.get(key).is_none());
            cache.put(key, "a cafe\nwith two lines\tand a tab").unwrap();
            assert_eq!(cache.get(key).unwrap(), "a cafe\nwith two lines\tand a tab");
        }
        let cache = ContextCache::open(&path).unwrap();
        assert_eq!(cache.get(key).unwrap(), "a cafe\nwith two lines\tand a tab");
    }

    #[test]
    fn cache_compacts_duplicate_writes_on_open() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.tsv");
        let key = GridKey { ix: 0, iy: 0 };
        {
            let mut cache = ContextCache::open(&path).unwrap();
            cache.put(key, "old").unwrap();
            cache.put(key, "new").unwrap();
            assert_eq!(cache.file_lines().unwrap(), 2);
        }
        let cache = ContextCache::open(&path).unwrap();
        assert_eq!(cache.get(key).unwrap(), "new");
        assert_eq!(cache.file_lines().unwrap(), 1);
    }

    #[test]
    fn memo_coalesces_concurrent_lookups() {
        use std::sync::atomic::{AtomicUsize, Ordering};
        let memo: CellMemo<String> = CellMemo::new();
        let calls = AtomicUsize::new(0);
        let key = GridKey { ix: 1, iy: 1 };
        std::thread::scope(|scope| {
            for _ in 0..8 {
                scope.spawn(|| {
                    let got = memo.get_or_compute(key, || {
                        calls.fetch_add(1, Ordering::SeqCst);
                        std::thread::sleep(std::time::Duration::from_millis(5));
                        Some("cell text".to_string())
                    });
                    assert_eq!(got.as_deref(), Some("cell text"));
                });
            }
        });
        assert_eq!(calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn memo_remembers_absent_results() {
        let memo: CellMemo<String> = CellMemo::new();
        let key = GridKey { ix: 2, iy: 2 };
        assert_eq!(memo.get_or_compute(key, || None), None);
        // Second lookup must not re-run the closure.
        assert_eq!(memo.get_or_compute(key, || panic!("recomputed")), None);
    }

    proptest! {
        #[test]
        fn distant_points_get_distinct_keys(
            lat in -60.0f64..60.0,
            lon in -170.0f64..170.0,
            angle in 0.0f64..std::f64::consts::TAU,
            extra in 1.0f64..50.0,
        ) {
            let proj = Projection::new(lat);
            let dist = CELL_SIZE_M * std::f64::consts::SQRT_2 + extra;
            let (x, y) = proj.project(lat, lon).unwrap();
            let (x2, y2) = (x + dist * angle.cos(), y + dist * angle.sin());
            let lat2 = y2 / METERS_PER_DEGREE;
            let lon2 = x2 / (METERS_PER_DEGREE * lat.to_radians().cos());
            prop_assume!((-90.0..=90.0).contains(&lat2) && lon2 > -180.0 && lon2 <= 180.0);
            let k1 = proj.grid_key(lat, lon).unwrap();
            let k2 = proj.grid_key(lat2, lon2).unwrap();
            prop_assert_ne!(k1, k2);
        }

        #[test]
        fn grid_key_is_deterministic(lat in -89.0f64..89.0, lon in -179.0f64..179.9) {
            let proj = Projection::new(lat);
            prop_assert_eq!(proj.grid_key(lat, lon).unwrap(), proj.grid_key(lat, lon).unwrap());
        }
    }
}
