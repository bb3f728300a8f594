//! Per-subject JSON records and their resolution into paired windows.

use std::path::Path;

use serde::{Deserialize, Serialize};
use tsda::features::{assemble_paired, FeatureConfig, LabelSegment, RawSource, WindowCounts};
use tsda::shift::{perturb_intervals_traced, shift_rng, HmmShiftConfig, ShiftedSubject};
use tsda::signal::{detect_peaks_ampd_with, detect_qrs, peaks_to_intervals, AmpdConfig, Interval};
use tsda::{IntervalSeries, LabelStream, PairedExample, PeakSeries, Waveform};

use crate::error::{CliError, Result};
use crate::fsio;

/// One sensor's view of a recording. Waveforms start at time zero.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainRecord {
    #[serde(default)]
    pub sample_rate_hz: Option<f64>,
    #[serde(default)]
    pub waveform: Option<Vec<f64>>,
    #[serde(default)]
    pub peaks_s: Option<Vec<f64>>,
    /// `[end_s, interval_s]` pairs; used for targets whose beat intervals were
    /// perturbed on the source clock and so have no peak train of their own.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intervals_s: Option<Vec<[f64; 2]>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubjectRecord {
    pub subject_id: String,
    pub source: DomainRecord,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<DomainRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<LabelSegment<f64>>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Detector {
    Qrs,
    Ampd,
}

/// Peak detectors used when a domain carries only a waveform.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Detectors {
    pub source: Detector,
    pub target: Detector,
}

impl Default for Detectors {
    fn default() -> Self {
        Self {
            source: Detector::Qrs,
            target: Detector::Ampd,
        }
    }
}

/// Longest beat period the AMPD scan has to cover.
const MAX_BEAT_PERIOD_S: f64 = 2.0;

impl DomainRecord {
    fn validate(&self, what: &str) -> Result<()> {
        if self.waveform.is_none() && self.peaks_s.is_none() && self.intervals_s.is_none() {
            return Err(CliError::Validation(format!(
                "{what}: needs a waveform or peaks"
            )));
        }
        if let Some(w) = &self.waveform {
            self.waveform_of(w)
                .map_err(|e| CliError::Validation(format!("{what}: {e}")))?;
        }
        if let Some(p) = &self.peaks_s {
            PeakSeries::new(p.clone())
                .map_err(|e| CliError::Validation(format!("{what} peaks: {e}")))?;
        }
        if let Some(iv) = &self.intervals_s {
            intervals_of(iv).map_err(|e| CliError::Validation(format!("{what} intervals: {e}")))?;
        }
        Ok(())
    }

    fn waveform_of(&self, samples: &[f64]) -> Result<Waveform> {
        let fs = self
            .sample_rate_hz
            .ok_or_else(|| CliError::Validation("waveform without sample_rate_hz".into()))?;
        Ok(Waveform::new(samples.to_vec(), fs, 0.0)?)
    }

    pub fn waveform(&self) -> Result<Option<Waveform>> {
        self.waveform
            .as_deref()
            .map(|w| self.waveform_of(w))
            .transpose()
    }

    /// Peaks as stored, or detected from the waveform.
    pub fn peaks(&self, detector: Detector) -> Result<Option<PeakSeries>> {
        if let Some(p) = &self.peaks_s {
            return Ok(Some(PeakSeries::new(p.clone())?));
        }
        let Some(w) = self.waveform()? else {
            return Ok(None);
        };
        let peaks = match detector {
            Detector::Qrs => detect_qrs(&w)?,
            Detector::Ampd => detect_peaks_ampd_with(
                &w,
                &AmpdConfig::for_max_period(w.sample_rate_hz(), MAX_BEAT_PERIOD_S),
            )?,
        };
        Ok(Some(peaks))
    }

    /// Beat intervals, preferring stored intervals, then peaks, then the waveform.
    pub fn intervals(&self, detector: Detector) -> Result<IntervalSeries> {
        if let Some(iv) = &self.intervals_s {
            return intervals_of(iv);
        }
        match self.peaks(detector)? {
            Some(p) => Ok(peaks_to_intervals(&p)),
            None => Err(CliError::Validation("domain has no beats".into())),
        }
    }
}

fn intervals_of(pairs: &[[f64; 2]]) -> Result<IntervalSeries> {
    let entries = pairs
        .iter()
        .map(|&[end_time_s, interval_s]| Interval {
            end_time_s,
            interval_s,
        })
        .collect();
    Ok(IntervalSeries::new(entries)?)
}

fn interval_pairs(s: &IntervalSeries) -> Vec<[f64; 2]> {
    s.entries()
        .iter()
        .map(|e| [e.end_time_s, e.interval_s])
        .collect()
}

/// A record resolved to beat intervals on a common window span.
#[derive(Debug, Clone)]
pub struct ResolvedSubject {
    pub subject_id: String,
    pub source: IntervalSeries,
    pub target: Option<IntervalSeries>,
    pub target_waveform: Option<Waveform>,
    pub labels: Option<LabelStream>,
    pub span: (f64, f64),
}

impl SubjectRecord {
    pub fn validate(&self) -> Result<()> {
        if self.subject_id.is_empty() {
            return Err(CliError::Validation("empty subject_id".into()));
        }
        let id = &self.subject_id;
        self.source.validate(&format!("{id} source"))?;
        if let Some(t) = &self.target {
            t.validate(&format!("{id} target"))?;
        }
        self.label_stream()
            .map_err(|e| CliError::Validation(format!("{id} labels: {e}")))?;
        Ok(())
    }

    pub fn label_stream(&self) -> Result<Option<LabelStream>> {
        self.labels
            .as_ref()
            .map(|l| LabelStream::new(l.clone()).map_err(CliError::from))
            .transpose()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let r: Self = serde_json::from_str(text).map_err(|e| CliError::Parse(e.to_string()))?;
        r.validate()?;
        Ok(r)
    }

    /// Compact JSON with fields in declaration order; numbers use the
    /// shortest representation that reads back to the same bits.
    pub fn to_canonical_json(&self) -> String {
        serde_json::to_string(self).expect("records serialize")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fsio::write_atomic(path, self.to_canonical_json().as_bytes())
    }

    pub fn resolve(&self, detectors: &Detectors) -> Result<ResolvedSubject> {
        let source = self.source.intervals(detectors.source)?;
        let target = self
            .target
            .as_ref()
            .map(|t| t.intervals(detectors.target))
            .transpose()?;
        let target_waveform = self
            .target
            .as_ref()
            .map(DomainRecord::waveform)
            .transpose()?
            .flatten();
        let labels = self.label_stream()?;
        let span = match labels.as_ref().and_then(|l| l.span()) {
            Some(s) => s,
            None => beat_span(&source, target.as_ref()).ok_or_else(|| {
                CliError::Data(format!("{}: no beats to window", self.subject_id))
            })?,
        };
        Ok(ResolvedSubject {
            subject_id: self.subject_id.clone(),
            source,
            target,
            target_waveform,
            labels,
            span,
        })
    }

    /// Replaces the target with an HMM perturbation of the source intervals,
    /// kept on the source clock.
    pub fn shifted(
        &self,
        index: usize,
        shift: &HmmShiftConfig,
        seed: u64,
        detectors: &Detectors,
    ) -> Result<Self> {
        let source = self.source.intervals(detectors.source)?;
        let p = perturb_intervals_traced(&source, shift, &mut shift_rng(seed, index))?;
        let target = p.on_timebase(&source)?;
        let domain = DomainRecord {
            intervals_s: Some(interval_pairs(&target)),
            ..DomainRecord::default()
        };
        Ok(Self {
            target: Some(domain),
            ..self.clone()
        })
    }

    pub fn from_shifted(sh: &ShiftedSubject, peaks: &PeakSeries) -> Self {
        let target = DomainRecord {
            sample_rate_hz: sh.raw.as_ref().map(|w| w.sample_rate_hz()),
            waveform: sh.raw.as_ref().map(|w| w.samples().to_vec()),
            peaks_s: None,
            intervals_s: Some(interval_pairs(&sh.target)),
        };
        Self {
            subject_id: sh.subject_id.clone(),
            source: DomainRecord {
                peaks_s: Some(peaks.times_s().to_vec()),
                ..DomainRecord::default()
            },
            target: Some(target),
            labels: Some(sh.labels.segments().to_vec()),
        }
    }
}

fn beat_span(source: &IntervalSeries, target: Option<&IntervalSeries>) -> Option<(f64, f64)> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for s in std::iter::once(source).chain(target) {
        if let (Some(first), Some(last)) = (s.entries().first(), s.entries().last()) {
            lo = lo.min(first.end_time_s - first.interval_s);
            hi = hi.max(last.end_time_s);
        }
    }
    (hi > lo).then_some((lo, hi))
}

impl ResolvedSubject {
    /// Windows both domains. Raw target slices are attached when asked for
    /// and a target waveform exists.
    pub fn to_paired(
        &self,
        cfg: &FeatureConfig,
        with_raw: bool,
    ) -> Result<(PairedExample, WindowCounts)> {
        let target = self.target.as_ref().ok_or_else(|| {
            CliError::Data(format!(
                "{}: no target domain; run `shift` first",
                self.subject_id
            ))
        })?;
        let raw = if with_raw {
            let w = self.target_waveform.as_ref().ok_or_else(|| {
                CliError::Data(format!(
                    "{}: the CNN branch needs a target waveform",
                    self.subject_id
                ))
            })?;
            Some(RawSource { waveform: w })
        } else {
            None
        };
        let (ex, _) = assemble_paired(
            &self.subject_id,
            &self.source,
            target,
            self.labels.as_ref(),
            raw,
            self.span.0,
            self.span.1,
            cfg,
        )?;
        let c = WindowCounts::of(&ex);
        log::info!(
            "{}: {} windows, {} kept, {} masked, {} ignored",
            self.subject_id,
            c.total,
            c.kept,
            c.masked,
            c.ignored
        );
        Ok((ex, c))
    }
}

/// Reads, parses and validates one subject file.
pub fn ingest_subject(path: &Path) -> Result<SubjectRecord> {
    let text = fsio::read_string(path)?;
    SubjectRecord::from_json(&text).map_err(|e| match e {
        CliError::Parse(m) => CliError::Parse(format!("{}: {m}", path.display())),
        CliError::Validation(m) => CliError::Validation(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Every `*.json` record of a directory, in file-name order.
pub fn ingest_dir(dir: &Path) -> Result<Vec<SubjectRecord>> {
    let records = fsio::json_files(dir)?
        .iter()
        .map(|p| ingest_subject(p))
        .collect::<Result<Vec<_>>>()?;
    if records.is_empty() {
        return Err(CliError::Data(format!(
            "{}: no subject records",
            dir.display()
        )));
    }
    Ok(records)
}
