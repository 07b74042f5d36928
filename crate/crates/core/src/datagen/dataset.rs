use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::speaker::{noise_source, synth_speaker, synth_utterance, SpeakerPrior, SpeakerProfile};
use crate::error::{Result, TseError};
use crate::signal::{mix, MixtureExample, Waveform};
use crate::wav::{read_wav, write_wav, WavEncoding};

pub const MANIFEST_FILE: &str = "manifest.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Dev,
    Eval,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Eval];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Eval => "eval",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSpec {
    pub n_train_speakers: usize,
    pub n_dev_speakers: usize,
    pub n_eval_speakers: usize,
    pub n_train_mixtures: usize,
    pub n_dev_mixtures: usize,
    pub n_eval_mixtures: usize,
    pub sir_range_db: [f64; 2],
    /// SNR range of the train and dev splits.
    pub snr_range_db: [f64; 2],
    pub eval_snr_range_db: [f64; 2],
    /// Enrollment candidates per mixture (N).
    pub n_enrollments: usize,
    pub utterances_per_speaker: usize,
    pub utterance_duration_range_s: [f64; 2],
    pub min_enrollment_duration_s: f64,
    pub intra_speaker_sigma_range: [f64; 2],
    pub sample_rate: u32,
    pub master_seed: u64,
    pub wav_encoding: WavEncoding,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            n_train_speakers: 16,
            n_dev_speakers: 4,
            n_eval_speakers: 8,
            n_train_mixtures: 200,
            n_dev_mixtures: 50,
            n_eval_mixtures: 100,
            sir_range_db: [-5.0, 5.0],
            snr_range_db: [0.0, 20.0],
            eval_snr_range_db: [5.0, 15.0],
            n_enrollments: 10,
            utterances_per_speaker: 20,
            utterance_duration_range_s: [0.4, 1.0],
            min_enrollment_duration_s: 0.5,
            intra_speaker_sigma_range: [0.03, 0.12],
            sample_rate: crate::signal::DEFAULT_SAMPLE_RATE,
            master_seed: 0,
            wav_encoding: WavEncoding::Float32,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(TseError::Config(m));
        if self.n_enrollments < 2 {
            return bad(format!("n_enrollments must be at least 2, got {}", self.n_enrollments));
        }
        for (name, [lo, hi]) in [
            ("sir_range_db", self.sir_range_db),
            ("snr_range_db", self.snr_range_db),
            ("eval_snr_range_db", self.eval_snr_range_db),
            ("utterance_duration_range_s", self.utterance_duration_range_s),
            ("intra_speaker_sigma_range", self.intra_speaker_sigma_range),
        ] {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return bad(format!("{name} must satisfy low <= high, got [{lo}, {hi}]"));
            }
        }
        if self.utterance_duration_range_s[0] <= 0.0 {
            return bad("utterance durations must be positive".into());
        }
        if self.intra_speaker_sigma_range[0] < 0.0 {
            return bad("intra_speaker_sigma must be non-negative".into());
        }
        if self.sample_rate == 0 {
            return bad("sample_rate must be positive".into());
        }
        for (split, speakers, mixtures) in [
            (Split::Train, self.n_train_speakers, self.n_train_mixtures),
            (Split::Dev, self.n_dev_speakers, self.n_dev_mixtures),
            (Split::Eval, self.n_eval_speakers, self.n_eval_mixtures),
        ] {
            if mixtures > 0 && speakers < 2 {
                return bad(format!("{} split needs at least 2 speakers to form mixtures", split.name()));
            }
        }
        if self.utterances_per_speaker < self.n_enrollments + 1 {
            return bad(format!(
                "utterances_per_speaker ({}) must exceed n_enrollments ({})",
                self.utterances_per_speaker, self.n_enrollments
            ));
        }
        Ok(())
    }

    fn speaker_range(&self, split: Split) -> std::ops::Range<usize> {
        let (a, b) = (self.n_train_speakers, self.n_dev_speakers);
        match split {
            Split::Train => 0..a,
            Split::Dev => a..a + b,
            Split::Eval => a + b..a + b + self.n_eval_speakers,
        }
    }

    fn n_mixtures(&self, split: Split) -> usize {
        match split {
            Split::Train => self.n_train_mixtures,
            Split::Dev => self.n_dev_mixtures,
            Split::Eval => self.n_eval_mixtures,
        }
    }

    fn snr_range(&self, split: Split) -> [f64; 2] {
        match split {
            Split::Eval => self.eval_snr_range_db,
            _ => self.snr_range_db,
        }
    }
}

/// SplitMix64 finaliser over (master, stream, index); sub-seeds of items
/// depend only on their position, never on generation order.
pub fn derive_seed(master: u64, stream: u64, index: u64) -> u64 {
    let mut z = master
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const STREAM_SPEAKER: u64 = 1;
const STREAM_UTTERANCE: u64 = 2;
const STREAM_MIXTURE: u64 = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub speaker_id: String,
    pub waveform: Waveform,
}

/// A generated mixture plus its enrollment candidates.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusMixture {
    pub id: String,
    pub split: Split,
    pub example: MixtureExample,
    pub target_utterance: String,
    /// Index into the train speaker list, for train mixtures.
    pub speaker_label: Option<usize>,
    /// Indices into [`Corpus::utterances`].
    pub enrollments: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub spec: DatasetSpec,
    pub speakers: Vec<SpeakerProfile>,
    pub utterances: Vec<Utterance>,
    pub mixtures: Vec<CorpusMixture>,
}

fn speaker_id(i: usize) -> String {
    format!("spk{i:03}")
}

/// Generate the whole corpus in memory.
pub fn generate(spec: &DatasetSpec) -> Result<Corpus> {
    spec.validate()?;
    let prior = SpeakerPrior {
        intra_speaker_sigma_range: spec.intra_speaker_sigma_range,
        sample_rate: spec.sample_rate,
    };
    let n_speakers = spec.n_train_speakers + spec.n_dev_speakers + spec.n_eval_speakers;
    let speakers: Vec<SpeakerProfile> = (0..n_speakers)
        .map(|i| synth_speaker(speaker_id(i), derive_seed(spec.master_seed, STREAM_SPEAKER, i as u64), &prior))
        .collect();

    let per = spec.utterances_per_speaker;
    let [dlo, dhi] = spec.utterance_duration_range_s;
    let mut utterances = Vec::with_capacity(n_speakers * per);
    for (si, profile) in speakers.iter().enumerate() {
        for u in 0..per {
            let seed = derive_seed(spec.master_seed, STREAM_UTTERANCE, (si * per + u) as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let dur = if dhi > dlo { rng.random_range(dlo..dhi) } else { dlo };
            utterances.push(Utterance {
                id: format!("{}_u{u:02}", profile.speaker_id),
                speaker_id: profile.speaker_id.clone(),
                waveform: spec
                    .wav_encoding
                    .quantize(&synth_utterance(profile, dur, spec.sample_rate, rng.random())?),
            });
        }
    }

    let mut mixtures = Vec::new();
    for split in Split::ALL {
        let pool: Vec<usize> = spec.speaker_range(split).collect();
        for m in 0..spec.n_mixtures(split) {
            let stream = STREAM_MIXTURE * 16 + split as u64;
            let seed = derive_seed(spec.master_seed, stream, m as u64);
            mixtures.push(make_mixture(spec, &speakers, &utterances, split, &pool, m, seed)?);
        }
    }
    Ok(Corpus {
        spec: spec.clone(),
        speakers,
        utterances,
        mixtures,
    })
}

fn make_mixture(
    spec: &DatasetSpec,
    speakers: &[SpeakerProfile],
    utterances: &[Utterance],
    split: Split,
    pool: &[usize],
    index: usize,
    seed: u64,
) -> Result<CorpusMixture> {
    let per = spec.utterances_per_speaker;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let target_spk = *pool.choose(&mut rng).expect("pool validated non-empty");
    let others: Vec<usize> = pool.iter().copied().filter(|&s| s != target_spk).collect();
    let interf_spk = *others.choose(&mut rng).expect("pool has at least two speakers");
    let target_utt = target_spk * per + rng.random_range(0..per);
    let interf_utt = interf_spk * per + rng.random_range(0..per);

    let [slo, shi] = spec.sir_range_db;
    let [nlo, nhi] = spec.snr_range(split);
    let sir = if shi > slo { rng.random_range(slo..shi) } else { slo };
    let snr = if nhi > nlo { rng.random_range(nlo..nhi) } else { nlo };

    let target = &utterances[target_utt].waveform;
    let noise = noise_source(rng.random(), target.duration_s() + 0.25, spec.sample_rate)?;
    let mix_seed: u64 = rng.random();
    let mut signals = mix(target, &utterances[interf_utt].waveform, &noise, sir, snr, mix_seed)?;
    let enc = spec.wav_encoding;
    for w in [
        &mut signals.mixture,
        &mut signals.target,
        &mut signals.interferer,
        &mut signals.noise,
    ] {
        *w = enc.quantize(w);
    }
    let example = MixtureExample::new(
        signals,
        speakers[target_spk].speaker_id.clone(),
        speakers[interf_spk].speaker_id.clone(),
    )?;

    let min_len = (spec.min_enrollment_duration_s * spec.sample_rate as f64).ceil() as usize;
    let mut valid: Vec<usize> = (target_spk * per..(target_spk + 1) * per)
        .filter(|&u| u != target_utt && utterances[u].waveform.len() >= min_len)
        .collect();
    if valid.len() < spec.n_enrollments {
        return Err(TseError::InsufficientUtterances {
            speaker: speakers[target_spk].speaker_id.clone(),
            available: valid.len(),
            required: spec.n_enrollments,
        });
    }
    valid.shuffle(&mut rng);
    valid.truncate(spec.n_enrollments);

    Ok(CorpusMixture {
        id: format!("{}_{index:05}", split.name()),
        split,
        example,
        target_utterance: utterances[target_utt].id.clone(),
        speaker_label: (split == Split::Train).then_some(target_spk),
        enrollments: valid,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnrollmentRef {
    pub id: String,
    pub path: String,
}

/// One line of the manifest. Paths are relative to the dataset directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    pub split: Split,
    pub mixture: String,
    pub target: String,
    pub interferer: String,
    pub noise: String,
    pub target_speaker: String,
    pub interferer_speaker: String,
    pub target_utterance: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speaker_label: Option<usize>,
    pub sir_db: f64,
    /// `null` in JSON means noise was disabled.
    #[serde(with = "snr_serde")]
    pub snr_db: f64,
    pub seed: u64,
    pub enrollments: Vec<EnrollmentRef>,
}

mod snr_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetManifest {
    pub records: Vec<ManifestRecord>,
}

impl DatasetManifest {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("manifest record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = fs::File::open(path).map_err(|e| TseError::io(path, e))?;
        let mut records = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| TseError::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec = serde_json::from_str(&line).map_err(|e| TseError::Parse {
                location: format!("{}:{}", path.display(), i + 1),
                message: e.to_string(),
            })?;
            records.push(rec);
        }
        Ok(Self { records })
    }

    /// Every referenced WAV must exist and parse.
    pub fn validate_files(&self, root: &Path) -> Result<()> {
        for r in &self.records {
            for p in [&r.mixture, &r.target, &r.interferer, &r.noise]
                .into_iter()
                .chain(r.enrollments.iter().map(|e| &e.path))
            {
                read_wav(root.join(p))?;
            }
        }
        Ok(())
    }
}

impl Corpus {
    pub fn manifest(&self) -> DatasetManifest {
        let records = self
            .mixtures
            .iter()
            .map(|m| {
                let base = format!("{}/{}", m.split.name(), m.id);
                ManifestRecord {
                    id: m.id.clone(),
                    split: m.split,
                    mixture: format!("{base}_mix.wav"),
                    target: format!("{base}_s.wav"),
                    interferer: format!("{base}_i.wav"),
                    noise: format!("{base}_n.wav"),
                    target_speaker: m.example.target_speaker_id.clone(),
                    interferer_speaker: m.example.interferer_speaker_id.clone(),
                    target_utterance: m.target_utterance.clone(),
                    speaker_label: m.speaker_label,
                    sir_db: m.example.signals.sir_db,
                    snr_db: m.example.signals.snr_db,
                    seed: m.example.signals.seed,
                    enrollments: m
                        .enrollments
                        .iter()
                        .map(|&u| EnrollmentRef {
                            id: self.utterances[u].id.clone(),
                            path: format!("utterances/{}.wav", self.utterances[u].id),
                        })
                        .collect(),
                }
            })
            .collect();
        DatasetManifest { records }
    }

    /// Write WAVs and the manifest under `dir`.
    pub fn write(&self, dir: &Path) -> Result<DatasetManifest> {
        let enc = self.spec.wav_encoding;
        let mkdir = |p: PathBuf| fs::create_dir_all(&p).map_err(|e| TseError::io(p, e));
        mkdir(dir.join("utterances"))?;
        for split in Split::ALL {
            mkdir(dir.join(split.name()))?;
        }
        for u in &self.utterances {
            write_wav(dir.join(format!("utterances/{}.wav", u.id)), &u.waveform, enc)?;
        }
        let manifest = self.manifest();
        for (m, r) in self.mixtures.iter().zip(&manifest.records) {
            let s = &m.example.signals;
            write_wav(dir.join(&r.mixture), &s.mixture, enc)?;
            write_wav(dir.join(&r.target), &s.target, enc)?;
            write_wav(dir.join(&r.interferer), &s.interferer, enc)?;
            write_wav(dir.join(&r.noise), &s.noise, enc)?;
        }
        let path = dir.join(MANIFEST_FILE);
        let mut f = fs::File::create(&path).map_err(|e| TseError::io(&path, e))?;
        f.write_all(manifest.to_jsonl().as_bytes())
            .map_err(|e| TseError::io(&path, e))?;
        Ok(manifest)
    }
}

/// Generate the corpus and write it to `dir`.
pub fn build_dataset(spec: &DatasetSpec, dir: &Path) -> Result<DatasetManifest> {
    generate(spec)?.write(dir)
}

/// A mixture ready for training or evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct Item {
    pub id: String,
    pub mixture: Waveform,
    pub target: Waveform,
    pub interferer: Waveform,
    pub target_speaker: String,
    pub interferer_speaker: String,
    pub speaker_label: Option<usize>,
    /// Indices into [`Dataset::utterances`].
    pub enrollments: Vec<usize>,
}

/// In-memory view of a dataset with shared enrollment utterances.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub utterance_ids: Vec<String>,
    pub utterance_speakers: Vec<String>,
    pub utterances: Vec<Waveform>,
    pub train: Vec<Item>,
    pub dev: Vec<Item>,
    pub eval: Vec<Item>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> &[Item] {
        match split {
            Split::Train => &self.train,
            Split::Dev => &self.dev,
            Split::Eval => &self.eval,
        }
    }

    pub fn n_enrollments(&self) -> Option<usize> {
        self.train
            .iter()
            .chain(&self.dev)
            .chain(&self.eval)
            .map(|i| i.enrollments.len())
            .min()
    }

    /// Number of distinct SI labels in the train split.
    pub fn n_train_speakers(&self) -> usize {
        self.train
            .iter()
            .filter_map(|i| i.speaker_label)
            .max()
            .map_or(0, |m| m + 1)
    }

    pub fn from_corpus(corpus: &Corpus) -> Self {
        let mut ds = Dataset {
            utterance_ids: corpus.utterances.iter().map(|u| u.id.clone()).collect(),
            utterance_speakers: corpus.utterances.iter().map(|u| u.speaker_id.clone()).collect(),
            utterances: corpus.utterances.iter().map(|u| u.waveform.clone()).collect(),
            ..Default::default()
        };
        for m in &corpus.mixtures {
            let s = &m.example.signals;
            let item = Item {
                id: m.id.clone(),
                mixture: s.mixture.clone(),
                target: s.target.clone(),
                interferer: s.interferer.clone(),
                target_speaker: m.example.target_speaker_id.clone(),
                interferer_speaker: m.example.interferer_speaker_id.clone(),
                speaker_label: m.speaker_label,
                enrollments: m.enrollments.clone(),
            };
            ds.push(m.split, item);
        }
        ds
    }

    fn push(&mut self, split: Split, item: Item) {
        match split {
            Split::Train => self.train.push(item),
            Split::Dev => self.dev.push(item),
            Split::Eval => self.eval.push(item),
        }
    }

    /// Load a dataset written by [`build_dataset`].
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest = DatasetManifest::read(dir.join(MANIFEST_FILE))?;
        let mut ds = Dataset::default();
        let mut index: HashMap<String, usize> = HashMap::new();
        for r in &manifest.records {
            let mut enrollments = Vec::with_capacity(r.enrollments.len());
            for e in &r.enrollments {
                let idx = match index.get(&e.id) {
                    Some(&i) => i,
                    None => {
                        ds.utterances.push(read_wav(dir.join(&e.path))?);
                        ds.utterance_ids.push(e.id.clone());
                        ds.utterance_speakers.push(r.target_speaker.clone());
                        index.insert(e.id.clone(), ds.utterances.len() - 1);
                        ds.utterances.len() - 1
                    }
                };
                enrollments.push(idx);
            }
            let item = Item {
                id: r.id.clone(),
                mixture: read_wav(dir.join(&r.mixture))?,
                target: read_wav(dir.join(&r.target))?,
                interferer: read_wav(dir.join(&r.interferer))?,
                target_speaker: r.target_speaker.clone(),
                interferer_speaker: r.interferer_speaker.clone(),
                speaker_label: r.speaker_label,
                enrollments,
            };
            ds.push(r.split, item);
        }
        Ok(ds)
    }
}
