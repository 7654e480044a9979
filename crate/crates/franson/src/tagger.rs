//! Time tagging: turn analyzer outcomes into discretized detector records
//! and correlate the resulting streams.
//!
//! The detection chain applies, in order: per-photon quantum efficiency,
//! Gaussian timing jitter, quantization to 4 ps ticks, merger with Poisson
//! dark counts, and a non-paralyzable dead time per channel. Streams store
//! integer ticks end to end, so identical seeds give bit-identical files.
//!
//! Coincidences are found the way counting hardware does it: bin the signed
//! arrival-time differences of every A-B tag pairing within a maximum lag.
//! Both streams are time sorted, so a single forward sweep with a sliding
//! window over the B stream visits each pairing once, linear in the stream
//! length plus the number of pairings.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interferometer::{Channel, Traversal};
use crate::units::{TICK_FEMTOSECONDS, TICK_SECONDS};

// ── records and detectors ───────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TagRecord {
    pub channel: Channel,
    pub ticks: u64,
}

/// Single-photon detector model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorSpec {
    /// Detection probability per incident photon.
    pub efficiency: f64,
    /// Gaussian timing jitter, std dev (s).
    pub jitter_std_s: f64,
    /// Non-paralyzable dead time (s): a tag closer than this to the
    /// previously kept tag on the same channel is dropped.
    pub dead_time_s: f64,
    /// Dark-count rate (counts/s), injected as an independent Poisson
    /// stream.
    pub dark_rate_hz: f64,
}

impl Default for DetectorSpec {
    fn default() -> Self {
        Self {
            efficiency: 0.65,
            jitter_std_s: 350e-12,
            dead_time_s: 25e-9,
            dark_rate_hz: 100.0,
        }
    }
}

impl DetectorSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.efficiency) {
            return Err(Error::InvalidConfig(
                "detector efficiency must lie in [0, 1]".into(),
            ));
        }
        if !(self.jitter_std_s >= 0.0)
            || !(self.dead_time_s >= 0.0)
            || !(self.dark_rate_hz >= 0.0)
        {
            return Err(Error::InvalidConfig(
                "jitter, dead time, and dark rate must be non-negative".into(),
            ));
        }
        Ok(())
    }

    pub fn dead_time_ticks(&self) -> u64 {
        (self.dead_time_s / TICK_SECONDS).round() as u64
    }
}

/// Round a time to the tagger grid; times jittered before the epoch clamp
/// to tick 0.
pub fn quantize_ticks(t_s: f64) -> u64 {
    let ticks = (t_s / TICK_SECONDS).round();
    if ticks <= 0.0 {
        0
    } else {
        ticks as u64
    }
}

/// Detect one traversal outcome: each photon fires its detector with that
/// channel's efficiency and lands at the true time plus jitter, quantized.
/// Dead time and darks act at stream level, not here.
pub fn detect<R: Rng + ?Sized>(
    outcome: &Traversal,
    spec_a: &DetectorSpec,
    spec_b: &DetectorSpec,
    rng: &mut R,
) -> [Option<TagRecord>; 2] {
    let one = |channel: Channel, time: f64, rng: &mut R| -> Option<TagRecord> {
        let spec = match channel {
            Channel::A => spec_a,
            Channel::B => spec_b,
        };
        if rng.gen::<f64>() >= spec.efficiency {
            return None;
        }
        let jitter = if spec.jitter_std_s > 0.0 {
            spec.jitter_std_s * rng.sample::<f64, _>(rand_distr::StandardNormal)
        } else {
            0.0
        };
        Some(TagRecord {
            channel,
            ticks: quantize_ticks(time + jitter),
        })
    };
    match *outcome {
        Traversal::Coincidence { time_a, time_b, .. } => [
            one(Channel::A, time_a, rng),
            one(Channel::B, time_b, rng),
        ],
        Traversal::SameDetector { channel, times, .. } => [
            one(channel, times[0], rng),
            one(channel, times[1], rng),
        ],
        Traversal::Lone { channel, time } => [one(channel, time, rng), None],
        Traversal::Absorbed => [None, None],
    }
}

// ── streams ─────────────────────────────────────────────────────────────────

/// Two-channel tick stream. Channels are kept separately; files interleave
/// them in global time order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TagStream {
    pub a: Vec<u64>,
    pub b: Vec<u64>,
}

impl TagStream {
    pub fn push(&mut self, tag: TagRecord) {
        match tag.channel {
            Channel::A => self.a.push(tag.ticks),
            Channel::B => self.b.push(tag.ticks),
        }
    }

    pub fn len(&self) -> usize {
        self.a.len() + self.b.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty() && self.b.is_empty()
    }

    pub fn sort(&mut self) {
        self.a.sort_unstable();
        self.b.sort_unstable();
    }

    /// Inject dark counts on both channels over `[0, duration_s)`.
    pub fn inject_darks<R: Rng + ?Sized>(
        &mut self,
        spec_a: &DetectorSpec,
        spec_b: &DetectorSpec,
        duration_s: f64,
        rng: &mut R,
    ) {
        for (ticks, rate) in [
            (&mut self.a, spec_a.dark_rate_hz),
            (&mut self.b, spec_b.dark_rate_hz),
        ] {
            let mean = rate * duration_s;
            if mean <= 0.0 {
                continue;
            }
            let n = Poisson::new(mean).expect("positive mean").sample(rng) as u64;
            for _ in 0..n {
                ticks.push(quantize_ticks(rng.gen::<f64>() * duration_s));
            }
        }
    }

    /// Apply each channel's dead time. Streams must already be sorted.
    pub fn apply_dead_time(&mut self, spec_a: &DetectorSpec, spec_b: &DetectorSpec) {
        dead_time_filter(&mut self.a, spec_a.dead_time_ticks());
        dead_time_filter(&mut self.b, spec_b.dead_time_ticks());
    }
}

/// Non-paralyzable dead time on a sorted tick vector: keep a tag only if it
/// is at least `dead_ticks` after the previously kept tag.
pub fn dead_time_filter(ticks: &mut Vec<u64>, dead_ticks: u64) {
    if dead_ticks == 0 || ticks.len() < 2 {
        return;
    }
    let mut last_kept = ticks[0];
    let mut write = 1;
    for read in 1..ticks.len() {
        let t = ticks[read];
        if t - last_kept >= dead_ticks {
            ticks[write] = t;
            last_kept = t;
            write += 1;
        }
    }
    ticks.truncate(write);
}

fn ensure_sorted(ticks: &[u64], channel: char) -> Result<()> {
    for (i, w) in ticks.windows(2).enumerate() {
        if w[1] < w[0] {
            return Err(Error::UnsortedStream {
                channel,
                index: i + 1,
            });
        }
    }
    Ok(())
}

// ── histogram ───────────────────────────────────────────────────────────────

/// Signed-lag coincidence histogram with dense bins. Bin `i` covers lags
/// `[i*W, (i+1)*W)` ticks for signed bin index `i`; lags beyond +-max_lag
/// are not counted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoincidenceHistogram {
    pub bin_width_ticks: i64,
    /// Signed index of the first bin.
    pub min_bin: i64,
    pub counts: Vec<u64>,
    pub max_lag_ticks: i64,
    /// Default integration window, carried as metadata for reports.
    pub window_center_ticks: i64,
    pub window_halfwidth_ticks: i64,
}

impl CoincidenceHistogram {
    /// Lower lag edge of bin slot `i`.
    pub fn lag_lower_edge(&self, slot: usize) -> i64 {
        (self.min_bin + slot as i64) * self.bin_width_ticks
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Sum of counts in bins whose centers lie within
    /// `[center - halfwidth, center + halfwidth]` ticks. The window must lie
    /// inside the histogrammed lag range; otherwise the sum would silently
    /// miss counts, so that is an error.
    pub fn integrate_window(&self, center_ticks: i64, halfwidth_ticks: i64) -> Result<u64> {
        if halfwidth_ticks < 0 {
            return Err(Error::InvalidConfig(
                "window halfwidth must be non-negative".into(),
            ));
        }
        let lo = center_ticks - halfwidth_ticks;
        let hi = center_ticks + halfwidth_ticks;
        let covered_lo = self.min_bin * self.bin_width_ticks;
        let covered_hi =
            (self.min_bin + self.counts.len() as i64) * self.bin_width_ticks - 1;
        if lo < covered_lo || hi > covered_hi {
            return Err(Error::WindowOutOfRange {
                lo,
                hi,
                max_lag: self.max_lag_ticks,
            });
        }
        // Bin centers in doubled units avoid any fractional arithmetic:
        // center*2 of bin i is 2*i*W + W - 1.
        let w = self.bin_width_ticks;
        let mut sum = 0u64;
        for (slot, &c) in self.counts.iter().enumerate() {
            let center2 = 2 * (self.min_bin + slot as i64) * w + w - 1;
            if (center2 - 2 * center_ticks).abs() <= 2 * halfwidth_ticks {
                sum += c;
            }
        }
        Ok(sum)
    }
}

/// Correlate the two channels of a sorted stream into a signed-lag
/// histogram: every A-B pairing with |t_B - t_A| <= max_lag is binned.
/// Linear two-pointer sweep; cost is the stream length plus the pairings.
pub fn build_histogram(
    stream: &TagStream,
    bin_width_ticks: i64,
    max_lag_ticks: i64,
) -> Result<CoincidenceHistogram> {
    if bin_width_ticks < 1 || max_lag_ticks < 0 {
        return Err(Error::InvalidConfig(
            "bin width must be >= 1 tick and max lag non-negative".into(),
        ));
    }
    ensure_sorted(&stream.a, 'A')?;
    ensure_sorted(&stream.b, 'B')?;

    let w = bin_width_ticks;
    let min_bin = (-max_lag_ticks).div_euclid(w);
    let max_bin = max_lag_ticks.div_euclid(w);
    let mut counts = vec![0u64; (max_bin - min_bin + 1) as usize];

    let b = &stream.b;
    let mut lo = 0usize;
    let mut hi = 0usize;
    for &ta in &stream.a {
        let ta = ta as i64;
        while lo < b.len() && (b[lo] as i64) < ta - max_lag_ticks {
            lo += 1;
        }
        if hi < lo {
            hi = lo;
        }
        while hi < b.len() && (b[hi] as i64) <= ta + max_lag_ticks {
            hi += 1;
        }
        for &tb in &b[lo..hi] {
            let lag = tb as i64 - ta;
            counts[(lag.div_euclid(w) - min_bin) as usize] += 1;
        }
    }

    Ok(CoincidenceHistogram {
        bin_width_ticks: w,
        min_bin,
        counts,
        max_lag_ticks,
        window_center_ticks: 0,
        window_halfwidth_ticks: 85, // 340 ps at 4 ps ticks
    })
}

// ── file formats ────────────────────────────────────────────────────────────

pub const TAG_FILE_MAGIC: &[u8; 8] = b"FRTAGS01";

/// Write a stream as the binary tag format: 8-byte magic, little-endian
/// u32 tick size in femtoseconds, then 9-byte records (u8 channel, 0 = A;
/// u64 little-endian ticks) interleaved in time order, channel A first on
/// ties.
pub fn write_tags<W: Write>(out: &mut W, stream: &TagStream) -> Result<()> {
    ensure_sorted(&stream.a, 'A')?;
    ensure_sorted(&stream.b, 'B')?;
    out.write_all(TAG_FILE_MAGIC)?;
    out.write_all(&TICK_FEMTOSECONDS.to_le_bytes())?;
    let mut buf = Vec::with_capacity(9 * stream.len());
    let (mut i, mut j) = (0usize, 0usize);
    while i < stream.a.len() || j < stream.b.len() {
        let take_a = match (stream.a.get(i), stream.b.get(j)) {
            (Some(&ta), Some(&tb)) => ta <= tb,
            (Some(_), None) => true,
            _ => false,
        };
        if take_a {
            buf.push(0u8);
            buf.extend_from_slice(&stream.a[i].to_le_bytes());
            i += 1;
        } else {
            buf.push(1u8);
            buf.extend_from_slice(&stream.b[j].to_le_bytes());
            j += 1;
        }
    }
    out.write_all(&buf)?;
    Ok(())
}

/// Read the binary tag format back into per-channel streams.
pub fn read_tags<R: Read>(input: &mut R) -> Result<TagStream> {
    let mut header = [0u8; 12];
    input.read_exact(&mut header).map_err(|_| {
        Error::TagFormat("file shorter than the 12-byte header".into())
    })?;
    if &header[0..8] != TAG_FILE_MAGIC {
        return Err(Error::TagFormat("bad magic bytes".into()));
    }
    let tick_fs = u32::from_le_bytes(header[8..12].try_into().unwrap());
    if tick_fs != TICK_FEMTOSECONDS {
        return Err(Error::TagFormat(format!(
            "unsupported tick size {tick_fs} fs (expected {TICK_FEMTOSECONDS})"
        )));
    }
    let mut body = Vec::new();
    input.read_to_end(&mut body)?;
    if body.len() % 9 != 0 {
        return Err(Error::TagFormat(format!(
            "record section length {} is not a multiple of 9",
            body.len()
        )));
    }
    let mut stream = TagStream::default();
    for rec in body.chunks_exact(9) {
        let ticks = u64::from_le_bytes(rec[1..9].try_into().unwrap());
        match rec[0] {
            0 => stream.a.push(ticks),
            1 => stream.b.push(ticks),
            c => {
                return Err(Error::TagFormat(format!("unknown channel byte {c}")));
            }
        }
    }
    ensure_sorted(&stream.a, 'A').map_err(|_| {
        Error::TagFormat("channel A timestamps decrease".into())
    })?;
    ensure_sorted(&stream.b, 'B').map_err(|_| {
        Error::TagFormat("channel B timestamps decrease".into())
    })?;
    Ok(stream)
}

pub fn write_tags_file<P: AsRef<Path>>(path: P, stream: &TagStream) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_tags(&mut file, stream)?;
    file.flush()?;
    Ok(())
}

pub fn read_tags_file<P: AsRef<Path>>(path: P) -> Result<TagStream> {
    let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
    read_tags(&mut file)
}

/// Histogram CSV: one row per bin, lag given as the bin's lower edge.
pub fn histogram_to_csv<W: Write>(h: &CoincidenceHistogram, out: &mut W) -> Result<()> {
    writeln!(out, "lag_ticks,count")?;
    for (slot, &c) in h.counts.iter().enumerate() {
        writeln!(out, "{},{}", h.lag_lower_edge(slot), c)?;
    }
    Ok(())
}
