use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal};

use super::zipfmt::{END_OF_CENTRAL_DIR, PAGE_FRAMING};
use super::{ChecksumType, CorpusError, PageRecord, Sequence, SizeStats, VolumeId, VolumeRecord};

/// Compressed volume sizes (KiB) across the full production collection.
///
/// The published minimum (189) exceeds the published first quartile (136), so
/// the minimum is treated as unknown and recorded as 0.
pub const REFERENCE_SIZE_MODEL: SizeStats = SizeStats {
    min: 0.0,
    q1: 136.0,
    median: 330.0,
    mean: 516.0,
    q3: 664.0,
    max: 26_583.0,
};

const MEAN_PAGES: f64 = 350.0;
const PAGE_SPREAD: f64 = 80.0;
const MIN_PAGES: usize = 8;
const MAX_PAGE_BYTES: u64 = 256 * 1024;
const BLANK_PAGE_CHANCE: f64 = 0.03;
const POOL_BYTES: usize = 1 << 20;
const LANGUAGES: [&str; 6] = ["eng", "eng", "eng", "ger", "fre", "lat"];

/// Deterministic generator of synthetic volumes.
///
/// Each volume's stored-zip size is drawn from a log-normal fitted to the
/// model's median and mean, truncated at the model's max; page text is cut
/// from a seeded pseudo-word pool so that `stored_archive_len` hits the drawn
/// size exactly.
pub struct SynthCorpus {
    rng: ChaCha8Rng,
    sizes: LogNormal<f64>,
    pages: Normal<f64>,
    max_kb: f64,
    pool: String,
    next: usize,
    n: usize,
}

pub fn synth_corpus(n: usize, seed: u64, model: &SizeStats) -> Result<SynthCorpus, CorpusError> {
    if !(model.median > 0.0 && model.mean > model.median && model.max >= model.mean) {
        return Err(CorpusError::BadSizeModel(
            "need 0 < median < mean <= max to fit a log-normal".into(),
        ));
    }
    let mu = model.median.ln();
    let sigma = (2.0 * (model.mean / model.median).ln()).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pool = word_pool(&mut rng);
    Ok(SynthCorpus {
        sizes: LogNormal::new(mu, sigma).map_err(|e| CorpusError::BadSizeModel(e.to_string()))?,
        pages: Normal::new(MEAN_PAGES, PAGE_SPREAD).expect("constant parameters"),
        max_kb: model.max,
        pool,
        rng,
        next: 0,
        n,
    })
}

fn word_pool(rng: &mut ChaCha8Rng) -> String {
    const SYLLABLES: [&str; 24] = [
        "ta", "ren", "do", "mi", "sel", "ca", "vor", "lu", "pe", "an", "is", "tho", "gra", "em",
        "ul", "ri", "ost", "ne", "ka", "bel", "um", "cor", "fa", "li",
    ];
    let words: Vec<String> = (0..2048)
        .map(|_| {
            let k = rng.random_range(1..=4);
            (0..k)
                .map(|_| SYLLABLES[rng.random_range(0..SYLLABLES.len())])
                .collect()
        })
        .collect();
    let mut pool = String::with_capacity(POOL_BYTES + 32);
    while pool.len() < POOL_BYTES {
        pool.push_str(&words[rng.random_range(0..words.len())]);
        pool.push(if rng.random_bool(0.08) { '\n' } else { ' ' });
    }
    pool
}

impl SynthCorpus {
    fn volume(&mut self, index: usize) -> VolumeRecord {
        let kb = loop {
            let x = self.sizes.sample(&mut self.rng);
            if x <= self.max_kb {
                break x;
            }
        };
        let target = (kb * 1024.0).round() as u64;

        let mut page_count = self
            .pages
            .sample(&mut self.rng)
            .round()
            .max(MIN_PAGES as f64) as usize;
        // keep per-page framing under half the volume and pages under the size cap
        page_count = page_count.min(((target / 2) / PAGE_FRAMING).max(1) as usize);
        page_count = page_count.max(target.div_ceil(MAX_PAGE_BYTES) as usize);
        let budget = target.saturating_sub(END_OF_CENTRAL_DIR + PAGE_FRAMING * page_count as u64);

        let blank: Vec<bool> = (0..page_count)
            .map(|i| i > 0 && self.rng.random_bool(BLANK_PAGE_CHANCE))
            .collect();
        let weights: Vec<f64> = blank
            .iter()
            .map(|&b| {
                if b {
                    0.0
                } else {
                    self.rng.random_range(0.5..1.5)
                }
            })
            .collect();
        let total: f64 = weights.iter().sum();
        let mut lens: Vec<u64> = weights
            .iter()
            .map(|w| (budget as f64 * w / total).floor() as u64)
            .collect();
        let assigned: u64 = lens.iter().sum();
        let last = blank.iter().rposition(|b| !b).unwrap_or(0);
        lens[last] += budget - assigned;

        let pages = lens
            .iter()
            .enumerate()
            .map(|(i, &len)| {
                let text = self.slice(len as usize);
                PageRecord::new(
                    Sequence::new(i as u32 + 1).unwrap(),
                    text,
                    ChecksumType::Sha256,
                )
            })
            .collect();
        let id = VolumeId::new(format!("syn:{index:07}")).unwrap();
        let language = LANGUAGES[self.rng.random_range(0..LANGUAGES.len())];
        let access = self.rng.random_range(1..=2);
        VolumeRecord::new(id, pages, access, language).expect("sequences are unique")
    }

    fn slice(&mut self, len: usize) -> String {
        if len == 0 {
            return String::new();
        }
        let mut out = String::with_capacity(len);
        while out.len() < len {
            let take = (len - out.len()).min(self.pool.len() / 2);
            let start = self.rng.random_range(0..self.pool.len() - take);
            out.push_str(&self.pool[start..start + take]);
        }
        out
    }
}

impl Iterator for SynthCorpus {
    type Item = VolumeRecord;

    fn next(&mut self) -> Option<VolumeRecord> {
        if self.next >= self.n {
            return None;
        }
        let v = self.volume(self.next);
        self.next += 1;
        Some(v)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = self.n - self.next;
        (left, Some(left))
    }
}
