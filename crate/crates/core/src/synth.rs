//! Synthetic lead-form data with planted character-level signals.
//!
//! Each sample is a short form-field string assembled from a fixed phrase
//! pool, optionally altered by three typing patterns:
//!
//! | signal          | planted as                                   |
//! |-----------------|----------------------------------------------|
//! | `misspelling`   | one letter doubled (the pool has no doubles) |
//! | `punct_overuse` | a run of 3 to 5 `!` or `?`                   |
//! | `all_caps`      | one word of 3+ letters in capitals           |
//!
//! The close label is drawn from `logistic(base + Σ effects of active
//! signals + tabular_weights · features)`, where the tabular features are
//! standard normal and independent of the text.

use std::sync::OnceLock;

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_distr::{Distribution, LogNormal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::LeadRecord;
use crate::error::{Error, Result};
use crate::rng::{stream, StreamRng};

const TEMPLATES: &str = include_str!("../assets/templates.txt");
const LENGTH_SPREAD: f64 = 0.45;
/// Longest possible growth from planting: one doubled letter plus five marks.
const MAX_GROWTH: usize = 6;
const MIN_BASE_LEN: usize = 8;

pub fn templates() -> &'static [&'static str] {
    static POOL: OnceLock<Vec<&'static str>> = OnceLock::new();
    POOL.get_or_init(|| {
        TEMPLATES
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .collect()
    })
}

/// One value per planted signal.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Signals<T> {
    pub misspelling: T,
    pub punct_overuse: T,
    pub all_caps: T,
}

impl<T: Copy> Signals<T> {
    pub fn as_array(&self) -> [T; 3] {
        [self.misspelling, self.punct_overuse, self.all_caps]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub n: usize,
    pub base_close_logit: f64,
    pub effects: Signals<f64>,
    pub signal_rates: Signals<f64>,
    pub tabular_weights: Vec<f64>,
    pub median_target: usize,
    pub max_len: usize,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    /// Calibrated so that the Bayes-optimal text-only scorer reaches
    /// r ≈ 0.363 against labels, with a close rate near 0.29.
    fn default() -> Self {
        Self {
            n: 7_000,
            base_close_logit: -2.0,
            effects: Signals {
                misspelling: 1.0,
                punct_overuse: 1.3,
                all_caps: 1.3,
            },
            signal_rates: Signals {
                misspelling: 0.25,
                punct_overuse: 0.25,
                all_caps: 0.25,
            },
            tabular_weights: vec![0.5, -0.4, 0.3, 0.2],
            median_target: 68,
            max_len: 214,
            seed: 0,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.n == 0 {
            return bad("n must be >= 1".into());
        }
        if self.signal_rates.as_array().iter().any(|r| !(0.0..=1.0).contains(r)) {
            return bad("signal rates must lie in [0, 1]".into());
        }
        if self.median_target == 0 || self.max_len < self.median_target {
            return bad("need max_len >= median_target >= 1".into());
        }
        if self.max_len < MIN_BASE_LEN + MAX_GROWTH {
            return bad(format!("max_len must be at least {}", MIN_BASE_LEN + MAX_GROWTH));
        }
        let all = self
            .effects
            .as_array()
            .into_iter()
            .chain(self.tabular_weights.iter().copied())
            .chain(std::iter::once(self.base_close_logit));
        if all.into_iter().any(|v| !v.is_finite()) {
            return bad("effects and weights must be finite".into());
        }
        Ok(())
    }

    /// Log-odds of closing given the signals and features.
    pub fn close_logit(&self, signals: &Signals<bool>, features: &[f64]) -> f64 {
        let text: f64 = signals
            .as_array()
            .iter()
            .zip(self.effects.as_array())
            .filter(|(on, _)| **on)
            .map(|(_, e)| e)
            .sum();
        let tabular: f64 = features.iter().zip(&self.tabular_weights).map(|(f, w)| f * w).sum();
        self.base_close_logit + text + tabular
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LeadSample {
    pub text: String,
    pub label: u8,
    pub features: Vec<f64>,
    /// Which signals were planted in `text`.
    pub signals: Signals<bool>,
}

impl From<&LeadSample> for LeadRecord {
    fn from(s: &LeadSample) -> Self {
        LeadRecord {
            text: s.text.clone(),
            label: s.label,
            features: Some(s.features.clone()),
            rnn_score: None,
        }
    }
}

fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Draws `config.n` samples. Text, signal, feature and label draws come
/// from separate streams of `config.seed`.
pub fn generate(config: &GeneratorConfig) -> Result<Vec<LeadSample>> {
    config.validate()?;
    let mut text_rng = stream(config.seed, "synth.text");
    let mut signal_rng = stream(config.seed, "synth.signals");
    let mut feature_rng = stream(config.seed, "synth.features");
    let lengths = LogNormal::new((config.median_target as f64).ln(), LENGTH_SPREAD)
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let longest_base = config.max_len - MAX_GROWTH;

    let mut samples = Vec::with_capacity(config.n);
    for _ in 0..config.n {
        let target = (lengths.sample(&mut text_rng).round() as usize).clamp(MIN_BASE_LEN, longest_base);
        let rates = config.signal_rates;
        let signals = Signals {
            misspelling: signal_rng.random_bool(rates.misspelling),
            punct_overuse: signal_rng.random_bool(rates.punct_overuse),
            all_caps: signal_rng.random_bool(rates.all_caps),
        };
        let mut chars: Vec<char> = base_text(target, &mut text_rng).chars().collect();
        if signals.all_caps {
            plant_caps(&mut chars, &mut text_rng);
        }
        if signals.misspelling {
            plant_double_letter(&mut chars, &mut text_rng);
        }
        if signals.punct_overuse {
            plant_punct_run(&mut chars, &mut text_rng);
        }
        let features = (0..config.tabular_weights.len())
            .map(|_| feature_rng.sample(StandardNormal))
            .collect();
        samples.push(LeadSample {
            text: chars.into_iter().collect(),
            label: 0,
            features,
            signals,
        });
    }
    let labels = draw_labels(config, samples.iter().map(|s| (&s.signals, s.features.as_slice())));
    for (s, y) in samples.iter_mut().zip(labels) {
        s.label = y;
    }
    Ok(samples)
}

/// Label draws for given signals and features, using only the label stream.
pub fn draw_labels<'a>(
    config: &GeneratorConfig,
    rows: impl IntoIterator<Item = (&'a Signals<bool>, &'a [f64])>,
) -> Vec<u8> {
    let mut label_rng = stream(config.seed, "synth.labels");
    rows.into_iter()
        .map(|(signals, features)| {
            let p = logistic(config.close_logit(signals, features));
            u8::from(label_rng.random::<f64>() < p)
        })
        .collect()
}

/// Generates `sizes.iter().sum()` samples and cuts them into consecutive splits.
pub fn generate_splits(config: &GeneratorConfig, sizes: &[usize]) -> Result<Vec<Vec<LeadSample>>> {
    let mut config = config.clone();
    config.n = sizes.iter().sum();
    let mut all = generate(&config)?.into_iter();
    Ok(sizes.iter().map(|&n| all.by_ref().take(n).collect()).collect())
}

fn base_text(target: usize, rng: &mut StreamRng) -> String {
    const SEPARATORS: [&str; 3] = [" ", ", ", ". "];
    let pool = templates();
    let mut text = String::new();
    while text.chars().count() < target {
        if !text.is_empty() {
            text.push_str(SEPARATORS.choose(rng).expect("non-empty"));
        }
        text.push_str(pool.choose(rng).expect("template pool is non-empty"));
    }
    let truncated: String = text.chars().take(target).collect();
    truncated.trim_end_matches([' ', ',', '.']).to_string()
}

fn plant_caps(chars: &mut [char], rng: &mut StreamRng) {
    let mut words = Vec::new();
    let mut start = 0;
    for i in 0..=chars.len() {
        if i == chars.len() || !chars[i].is_alphabetic() {
            if i - start >= 3 && (i == chars.len() || chars[i] == ' ' || chars[i] == ',' || chars[i] == '.') {
                words.push(start..i);
            }
            start = i + 1;
        }
    }
    let range = match words.choose(rng) {
        Some(r) => r.clone(),
        None => return,
    };
    for c in &mut chars[range] {
        *c = c.to_ascii_uppercase();
    }
}

fn plant_double_letter(chars: &mut Vec<char>, rng: &mut StreamRng) {
    let letters: Vec<usize> = (0..chars.len()).filter(|&i| chars[i].is_alphabetic()).collect();
    if let Some(&i) = letters.choose(rng) {
        chars.insert(i + 1, chars[i]);
    }
}

fn plant_punct_run(chars: &mut Vec<char>, rng: &mut StreamRng) {
    let mark = if rng.random_bool(0.5) { '!' } else { '?' };
    let run = rng.random_range(3..=5);
    let mut ends: Vec<usize> = (1..chars.len())
        .filter(|&i| chars[i] == ' ' && chars[i - 1].is_alphanumeric())
        .collect();
    ends.push(chars.len());
    let at = *ends.choose(rng).expect("end of text is always a candidate");
    for _ in 0..run {
        chars.insert(at, mark);
    }
}

/// Recovers which signals are present from the text alone.
pub fn detect_signals(text: &str) -> Signals<bool> {
    let chars: Vec<char> = text.chars().collect();
    let misspelling = chars.windows(2).any(|w| w[0].is_alphabetic() && w[0] == w[1]);
    let punct_overuse = chars
        .windows(3)
        .any(|w| matches!(w[0], '!' | '?') && w[0] == w[1] && w[1] == w[2]);
    let all_caps = chars.windows(3).any(|w| w.iter().all(|c| c.is_uppercase()));
    Signals {
        misspelling,
        punct_overuse,
        all_caps,
    }
}

/// Summary statistics of a dataset. Signal prevalence is read off the text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub count: usize,
    pub length_median: f64,
    pub length_max: usize,
    pub close_rate: f64,
    pub prevalence: Signals<f64>,
}

pub fn dataset_stats(records: &[LeadRecord]) -> Result<DatasetStats> {
    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let n = records.len();
    let mut lengths: Vec<usize> = records.iter().map(|r| r.text.chars().count()).collect();
    lengths.sort_unstable();
    let length_median = if n % 2 == 1 {
        lengths[n / 2] as f64
    } else {
        (lengths[n / 2 - 1] + lengths[n / 2]) as f64 / 2.0
    };
    let mut counts = [0usize; 3];
    for r in records {
        for (c, on) in counts.iter_mut().zip(detect_signals(&r.text).as_array()) {
            *c += usize::from(on);
        }
    }
    let share = |c: usize| c as f64 / n as f64;
    Ok(DatasetStats {
        count: n,
        length_median,
        length_max: lengths[n - 1],
        close_rate: share(records.iter().map(|r| usize::from(r.label)).sum()),
        prevalence: Signals {
            misspelling: share(counts[0]),
            punct_overuse: share(counts[1]),
            all_caps: share(counts[2]),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn template_pool_is_clean() {
        assert!(templates().len() >= 50);
        for t in templates() {
            assert_eq!(detect_signals(t), Signals::default(), "{t}");
            assert!(!t.chars().any(|c| c.is_uppercase()), "{t}");
        }
    }

    #[test]
    fn planted_signals_are_detectable() {
        let config = GeneratorConfig {
            n: 3_000,
            ..GeneratorConfig::default()
        };
        for s in generate(&config).unwrap() {
            assert_eq!(detect_signals(&s.text), s.signals, "{}", s.text);
            let len = s.text.chars().count();
            assert!((1..=config.max_len).contains(&len));
            assert!(s.label <= 1);
            assert_eq!(s.features.len(), 4);
        }
    }

    #[test]
    fn same_seed_same_data() {
        let config = GeneratorConfig {
            n: 200,
            seed: 17,
            ..GeneratorConfig::default()
        };
        assert_eq!(generate(&config).unwrap(), generate(&config).unwrap());
        let other = GeneratorConfig { seed: 18, ..config.clone() };
        assert_ne!(generate(&config).unwrap(), generate(&other).unwrap());
    }

    #[test]
    fn labels_regenerate_from_indicators() {
        let config = GeneratorConfig {
            n: 500,
            seed: 3,
            ..GeneratorConfig::default()
        };
        let samples = generate(&config).unwrap();
        let again = draw_labels(&config, samples.iter().map(|s| (&s.signals, s.features.as_slice())));
        assert_eq!(again, samples.iter().map(|s| s.label).collect::<Vec<_>>());
    }

    #[test]
    fn invalid_configs() {
        let mut c = GeneratorConfig::default();
        c.n = 0;
        assert!(generate(&c).is_err());
        let mut c = GeneratorConfig::default();
        c.signal_rates.all_caps = 1.5;
        assert!(c.validate().is_err());
        let mut c = GeneratorConfig::default();
        c.median_target = 300;
        assert!(c.validate().is_err());
    }

    #[test]
    fn stats_examples() {
        let stats = dataset_stats(&[LeadRecord::new("hi!!!", 1)]).unwrap();
        assert_eq!(stats.length_median, 5.0);
        assert_eq!(stats.length_max, 5);
        assert_eq!(stats.close_rate, 1.0);
        assert_eq!(stats.prevalence.punct_overuse, 1.0);
        assert_eq!(stats.prevalence.misspelling, 0.0);

        let colors: Vec<_> = ["YELLOW", "BLUE", "RED"].iter().map(|t| LeadRecord::new(*t, 0)).collect();
        let stats = dataset_stats(&colors).unwrap();
        assert_eq!(stats.length_median, 4.0);
        assert_eq!(stats.length_max, 6);
        assert!(matches!(dataset_stats(&[]), Err(Error::EmptyDataset)));
    }

    #[test]
    fn splits_are_consecutive() {
        let config = GeneratorConfig {
            seed: 5,
            ..GeneratorConfig::default()
        };
        let splits = generate_splits(&config, &[30, 10, 5]).unwrap();
        let whole = generate(&GeneratorConfig { n: 45, ..config }).unwrap();
        assert_eq!(splits.concat(), whole);
    }
}
