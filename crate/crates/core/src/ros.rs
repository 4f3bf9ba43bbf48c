//! Rate of speech: computation from alignments, rate bins, data partitions
//! and distribution statistics.

use std::collections::BTreeMap;
use std::fmt;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::hmm::Alignment;
use crate::manifest::{Manifest, ManifestEntry};

/// Internal pauses longer than this are cut out of the speech span.
pub const DEFAULT_MAX_PAUSE_S: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RosValue {
    pub phones_per_second: f64,
    pub num_phones: usize,
    pub speech_duration_s: f64,
}

impl RosValue {
    pub fn new(num_phones: usize, speech_duration_s: f64) -> Result<Self> {
        if !(speech_duration_s > 0.0 && speech_duration_s.is_finite()) {
            return Err(Error::NoSpeech);
        }
        Ok(Self {
            phones_per_second: num_phones as f64 / speech_duration_s,
            num_phones,
            speech_duration_s,
        })
    }
}

/// Phones per second over the non-silence part of an alignment.
pub fn compute_ros(a: &Alignment) -> Result<RosValue> {
    compute_ros_with_pause(a, DEFAULT_MAX_PAUSE_S)
}

/// As [`compute_ros`], removing internal silences longer than `max_pause_s`
/// from the speech span.
pub fn compute_ros_with_pause(a: &Alignment, max_pause_s: f64) -> Result<RosValue> {
    let segments = a.phone_segments();
    let speech: Vec<_> = segments
        .iter()
        .filter(|s| Some(s.phone) != a.silence_phone)
        .collect();
    let (first, last) = match (speech.first(), speech.last()) {
        (Some(f), Some(l)) => (f.start, l.end),
        _ => return Err(Error::NoSpeech),
    };
    let mut frames = last - first;
    let max_pause_frames = max_pause_s / a.frame_shift_s;
    for s in &segments {
        if Some(s.phone) == a.silence_phone
            && s.start > first
            && s.end < last
            && (s.end - s.start) as f64 > max_pause_frames
        {
            frames -= s.end - s.start;
        }
    }
    RosValue::new(speech.len(), frames as f64 * a.frame_shift_s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RateBin {
    Slow,
    Normal,
    Fast,
}

impl RateBin {
    pub const ALL: [RateBin; 3] = [RateBin::Slow, RateBin::Normal, RateBin::Fast];

    pub fn tag(self) -> &'static str {
        match self {
            RateBin::Slow => "slow",
            RateBin::Normal => "normal",
            RateBin::Fast => "fast",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "slow" => Some(RateBin::Slow),
            "normal" => Some(RateBin::Normal),
            "fast" => Some(RateBin::Fast),
            _ => None,
        }
    }
}

impl fmt::Display for RateBin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

/// Slow below `slow_max`, fast above `fast_min`, normal in between
/// (both edges inclusive).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateBins {
    pub slow_max: f64,
    pub fast_min: f64,
}

impl Default for RateBins {
    fn default() -> Self {
        Self {
            slow_max: 4.0,
            fast_min: 10.0,
        }
    }
}

impl RateBins {
    pub fn new(slow_max: f64, fast_min: f64) -> Result<Self> {
        if !(slow_max > 0.0 && slow_max < fast_min && fast_min.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "rate bins need 0 < slow_max < fast_min, got {slow_max} and {fast_min}"
            )));
        }
        Ok(Self { slow_max, fast_min })
    }

    pub fn bin_of(&self, phones_per_second: f64) -> RateBin {
        if phones_per_second < self.slow_max {
            RateBin::Slow
        } else if phones_per_second > self.fast_min {
            RateBin::Fast
        } else {
            RateBin::Normal
        }
    }

    pub fn range_label(&self, bin: RateBin) -> String {
        match bin {
            RateBin::Slow => format!("<{}", self.slow_max),
            RateBin::Normal => format!("{}~{}", self.slow_max, self.fast_min),
            RateBin::Fast => format!(">{}", self.fast_min),
        }
    }
}

pub fn bin_of(ros: &RosValue, bins: &RateBins) -> RateBin {
    bins.bin_of(ros.phones_per_second)
}

fn ros_of(e: &ManifestEntry) -> Result<f64> {
    e.ros.ok_or_else(|| Error::MissingRos(e.id.clone()))
}

/// Splits into (ROS below `threshold`, ROS at or above `threshold`),
/// preserving order.
pub fn partition_manifest(m: &Manifest, threshold: f64) -> Result<(Manifest, Manifest)> {
    let mut below = Vec::new();
    let mut above = Vec::new();
    for e in m.iter() {
        if ros_of(e)? < threshold {
            below.push(e.clone());
        } else {
            above.push(e.clone());
        }
    }
    Ok((Manifest::new(below), Manifest::new(above)))
}

/// Draws `floor(n / 2)` utterances, stratified by 1 phone/s ROS bins so the
/// sample keeps the ROS distribution of the full set. Output keeps the input
/// order.
pub fn sample_half(m: &Manifest, seed: u64) -> Result<Manifest> {
    let mut strata: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
    for (i, e) in m.iter().enumerate() {
        strata.entry(ros_of(e)?.floor() as i64).or_default().push(i);
    }
    let target = m.len() / 2;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut quota: BTreeMap<i64, usize> = strata.iter().map(|(k, v)| (*k, v.len() / 2)).collect();
    let assigned: usize = quota.values().sum();
    let mut odd: Vec<i64> = strata
        .iter()
        .filter(|(_, v)| v.len() % 2 == 1)
        .map(|(k, _)| *k)
        .collect();
    odd.shuffle(&mut rng);
    for k in odd.into_iter().take(target - assigned) {
        *quota.get_mut(&k).expect("stratum present") += 1;
    }
    let mut chosen = Vec::with_capacity(target);
    for (k, members) in &strata {
        let mut members = members.clone();
        members.shuffle(&mut rng);
        chosen.extend(members.into_iter().take(quota[k]));
    }
    chosen.sort_unstable();
    Ok(chosen.into_iter().map(|i| m.entries[i].clone()).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RosHistogram {
    pub bin_edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl RosHistogram {
    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    /// Index of the most populated bin (first one on ties).
    pub fn mode_bin(&self) -> usize {
        let max = self.counts.iter().copied().max().unwrap_or(0);
        self.counts.iter().position(|&c| c == max).unwrap_or(0)
    }

    pub fn bin_range(&self, i: usize) -> (f64, f64) {
        (self.bin_edges[i], self.bin_edges[i + 1])
    }

    /// `edge_lo,edge_hi,count` rows with a header line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("edge_lo,edge_hi,count\n");
        for (i, c) in self.counts.iter().enumerate() {
            let _ = writeln!(out, "{},{},{}", self.bin_edges[i], self.bin_edges[i + 1], c);
        }
        out
    }
}

/// Fixed-width histogram over `[0, max rounded up to a bin edge]`. The last
/// bin is closed so the maximum is counted.
pub fn histogram(values: &[f64], bin_width: f64) -> Result<RosHistogram> {
    if values.is_empty() {
        return Err(Error::EmptyInput("no ROS values"));
    }
    if !(bin_width > 0.0 && bin_width.is_finite()) {
        return Err(Error::InvalidConfig(format!("bin width must be positive, got {bin_width}")));
    }
    if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
        return Err(Error::InvalidRos(*v));
    }
    let max = values.iter().copied().fold(0.0, f64::max);
    let num_bins = ((max / bin_width).ceil() as usize).max(1);
    let bin_edges = (0..=num_bins).map(|i| i as f64 * bin_width).collect();
    let mut counts = vec![0; num_bins];
    for v in values {
        let idx = ((v / bin_width).floor() as usize).min(num_bins - 1);
        counts[idx] += 1;
    }
    Ok(RosHistogram { bin_edges, counts })
}

/// Sample skewness (third standardized moment).
pub fn skewness(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let m2 = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let m3 = values.iter().map(|v| (v - mean).powi(3)).sum::<f64>() / n;
    if m2 == 0.0 {
        0.0
    } else {
        m3 / m2.powf(1.5)
    }
}
