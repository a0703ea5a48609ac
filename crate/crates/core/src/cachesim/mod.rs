//! Set-associative LRU model of an L1 data cache, plus the trace language
//! whose programs serve as deterministic improvement targets.

pub mod dsl;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use dsl::{parse_trace_program, run_trace_program, Bindings, DslError, TraceProgram, TraceRun};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CacheConfigError {
    #[error("line size and associativity must be non-zero")]
    Zero,
    #[error("cache size {size} is not a multiple of line size x associativity ({line} x {ways})")]
    NotDivisible { size: u64, line: u64, ways: u64 },
    #[error("number of sets ({0}) is not a power of two")]
    SetsNotPowerOfTwo(u64),
}

/// Geometry of the simulated cache. Write misses always allocate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CacheConfig {
    pub size_bytes: u64,
    pub line_bytes: u64,
    pub associativity: u64,
}

impl Default for CacheConfig {
    /// 32 KB, 64-byte lines, 8-way: 512 lines in 64 sets.
    fn default() -> Self {
        Self {
            size_bytes: 32 * 1024,
            line_bytes: 64,
            associativity: 8,
        }
    }
}

impl CacheConfig {
    pub fn new(size_bytes: u64, line_bytes: u64, associativity: u64) -> Result<Self, CacheConfigError> {
        let config = Self {
            size_bytes,
            line_bytes,
            associativity,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), CacheConfigError> {
        if self.line_bytes == 0 || self.associativity == 0 {
            return Err(CacheConfigError::Zero);
        }
        let way_bytes = self.line_bytes * self.associativity;
        if self.size_bytes == 0 || !self.size_bytes.is_multiple_of(way_bytes) {
            return Err(CacheConfigError::NotDivisible {
                size: self.size_bytes,
                line: self.line_bytes,
                ways: self.associativity,
            });
        }
        let sets = self.size_bytes / way_bytes;
        if !sets.is_power_of_two() {
            return Err(CacheConfigError::SetsNotPowerOfTwo(sets));
        }
        Ok(())
    }

    pub fn num_sets(&self) -> u64 {
        self.size_bytes / (self.line_bytes * self.associativity)
    }

    pub fn num_lines(&self) -> u64 {
        self.size_bytes / self.line_bytes
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AccessKind {
    Read,
    Write,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Access {
    pub kind: AccessKind,
    pub address: u64,
    /// 1 to 8 bytes.
    pub size: u8,
}

impl Access {
    pub fn read(address: u64, size: u8) -> Self {
        Self {
            kind: AccessKind::Read,
            address,
            size,
        }
    }

    pub fn write(address: u64, size: u8) -> Self {
        Self {
            kind: AccessKind::Write,
            address,
            size,
        }
    }
}

impl fmt::Display for Access {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.kind {
            AccessKind::Read => 'R',
            AccessKind::Write => 'W',
        };
        write!(f, "{kind} {:#x} {}", self.address, self.size)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("malformed trace line: {0:?}")]
pub struct TraceLineError(pub String);

impl FromStr for Access {
    type Err = TraceLineError;

    /// Parses one line of a trace dump: `R|W <hex address> <size>`.
    fn from_str(line: &str) -> Result<Self, Self::Err> {
        let err = || TraceLineError(line.to_string());
        let mut fields = line.split_whitespace();
        let kind = match fields.next() {
            Some("R") | Some("r") => AccessKind::Read,
            Some("W") | Some("w") => AccessKind::Write,
            _ => return Err(err()),
        };
        let addr = fields.next().ok_or_else(err)?;
        let addr = addr
            .strip_prefix("0x")
            .or_else(|| addr.strip_prefix("0X"))
            .unwrap_or(addr);
        let address = u64::from_str_radix(addr, 16).map_err(|_| err())?;
        let size: u8 = fields.next().ok_or_else(err)?.parse().map_err(|_| err())?;
        if !(1..=8).contains(&size) || fields.next().is_some() {
            return Err(err());
        }
        Ok(Self {
            kind,
            address,
            size,
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheStats {
    pub accesses: u64,
    pub misses: u64,
    pub evictions: u64,
}

/// Incremental cache state. Each set keeps its resident tags ordered from
/// most to least recently used.
#[derive(Debug, Clone)]
pub struct Cache {
    config: CacheConfig,
    sets: Vec<Vec<u64>>,
    stats: CacheStats,
}

impl Cache {
    pub fn new(config: CacheConfig) -> Self {
        let ways = config.associativity as usize;
        Self {
            config,
            sets: vec![Vec::with_capacity(ways); config.num_sets() as usize],
            stats: CacheStats::default(),
        }
    }

    pub fn config(&self) -> &CacheConfig {
        &self.config
    }

    pub fn stats(&self) -> CacheStats {
        self.stats
    }

    pub fn access(&mut self, access: Access) {
        self.stats.accesses += 1;
        let size = u64::from(access.size.max(1));
        let first = access.address / self.config.line_bytes;
        let last = access.address.saturating_add(size - 1) / self.config.line_bytes;
        self.touch_line(first);
        if last != first {
            self.touch_line(last);
        }
    }

    /// Touches one line; returns true on a hit.
    fn touch_line(&mut self, line: u64) -> bool {
        let num_sets = self.sets.len() as u64;
        let set = &mut self.sets[(line % num_sets) as usize];
        let tag = line / num_sets;
        if let Some(pos) = set.iter().position(|&t| t == tag) {
            set[..=pos].rotate_right(1);
            return true;
        }
        self.stats.misses += 1;
        if set.len() == self.config.associativity as usize {
            set.pop();
            self.stats.evictions += 1;
        }
        set.insert(0, tag);
        false
    }
}

/// Runs `accesses` through a cold cache.
pub fn simulate<I>(config: &CacheConfig, accesses: I) -> CacheStats
where
    I: IntoIterator<Item = Access>,
{
    let mut cache = Cache::new(*config);
    for access in accesses {
        cache.access(access);
    }
    cache.stats()
}

/// Parses a trace dump, one access per line. Blank lines and `#` comments are
/// skipped.
pub fn parse_trace_dump(text: &str) -> Result<Vec<Access>, TraceLineError> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::parse)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_geometry() {
        let c = CacheConfig::default();
        assert_eq!(c.num_lines(), 512);
        assert_eq!(c.num_sets(), 64);
        c.validate().unwrap();
    }

    #[test]
    fn invalid_geometry() {
        assert_eq!(CacheConfig::new(32768, 0, 8), Err(CacheConfigError::Zero));
        assert!(matches!(
            CacheConfig::new(1000, 64, 8),
            Err(CacheConfigError::NotDivisible { .. })
        ));
        assert_eq!(
            CacheConfig::new(64 * 3, 64, 1),
            Err(CacheConfigError::SetsNotPowerOfTwo(3))
        );
    }

    #[test]
    fn single_cold_miss() {
        let s = simulate(&CacheConfig::default(), [Access::read(0, 4)]);
        assert_eq!(s, CacheStats { accesses: 1, misses: 1, evictions: 0 });
    }

    #[test]
    fn sequential_scan_misses_once_per_line() {
        let s = simulate(&CacheConfig::default(), (0..16384u64).map(|i| Access::read(i * 4, 4)));
        assert_eq!(s.accesses, 16384);
        assert_eq!(s.misses, 1024);
    }

    #[test]
    fn double_pass_over_resident_array() {
        let pass = (0..4096u64).map(|i| Access::read(i * 4, 4));
        let s = simulate(&CacheConfig::default(), pass.clone().chain(pass));
        assert_eq!(s.misses, 256);
        assert_eq!(s.evictions, 0);
    }

    #[test]
    fn straddling_access_touches_two_lines() {
        let s = simulate(&CacheConfig::default(), [Access::write(62, 4)]);
        assert_eq!(s.accesses, 1);
        assert_eq!(s.misses, 2);
    }

    #[test]
    fn lru_evicts_least_recent() {
        // direct-mapped pair of sets, 2 ways: lines 0, 2, 4 share set 0
        let cfg = CacheConfig::new(256, 64, 2).unwrap();
        let mut cache = Cache::new(cfg);
        for line in [0u64, 2, 0, 4, 0, 2] {
            cache.access(Access::read(line * 64, 1));
        }
        // 0 miss, 2 miss, 0 hit, 4 miss (evicts 2), 0 hit, 2 miss (evicts 4)
        assert_eq!(cache.stats().misses, 4);
        assert_eq!(cache.stats().evictions, 2);
    }

    #[test]
    fn trace_dump_parsing() {
        let accesses = parse_trace_dump("# header\nR 0x40 4\nW 80 8\n\n").unwrap();
        assert_eq!(accesses, vec![Access::read(0x40, 4), Access::write(0x80, 8)]);
        assert_eq!(accesses[0].to_string(), "R 0x40 4");
        assert!(parse_trace_dump("X 0 4").is_err());
        assert!(parse_trace_dump("R 0 9").is_err());
    }
}
