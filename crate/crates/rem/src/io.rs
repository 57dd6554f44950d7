//! Corpus manifests, payload files and model checkpoints.
//!
//! Manifest: one tab-separated record per sample,
//! `id role family seed chain path`, `-` for an absent family or chain,
//! `path` relative to the manifest's directory. Lines starting with `#` are
//! comments.
//!
//! Payloads: images as binary PGM (1 channel) or PPM (3 channels) with
//! maxval 65535; vectors as a little-endian `u64` count followed by that
//! many little-endian `f32` values.
//!
//! Autoencoder checkpoint (`REMAE1`): magic, `u64` input dim, `d_z`, hidden
//! width; then `f32` parameters in the order enc_hidden (w, b), enc_code
//! (w, b), dec_hidden (w, b), dec_out (w, b), each weight row-major
//! `out × in`; then latent mean and std (`d_z` `f32` each); then a `u64`
//! epoch count and one `f64` loss per epoch.
//!
//! Envelope checkpoint (`REMEE1`): magic; `u64` learner kind (0 dense,
//! 1 texture), input dim, hidden width or filter count, `D_h`, kernel,
//! image width, height, channels (zero for dense), `D_a`, `p`; `f64`
//! weights `λ₁ λ₂ λ₃` and texture input scale; `f32` blocks `φ` (four),
//! `s.w`, `s.b`, `W` (`D_a × D_h`), then `U_p` (`D_h × p`, row-major); `f64`
//! explained variance; `u64` epoch count and per epoch six `f64` loss values
//! (bce, tan, anc, res, total, grad norm) and a `u64` tangent dimension.
//! All integers and floats are little-endian.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rem_core::envelope::{DenseLearner, EnvelopeMeta, EnvelopeModel, Learner, LossReport, LossWeights, TextureLearner};
use rem_core::mbr::{Autoencoder, TrainingMeta};
use rem_core::nn::Dense;
use rem_core::worldgen::{Family, Payload, Role, Sample};
use rem_core::{Image, Matrix, TangentBasis};

use crate::error::{RemError, Result};

pub const MANIFEST_FILE: &str = "manifest.tsv";
const AE_MAGIC: &[u8; 6] = b"REMAE1";
const EE_MAGIC: &[u8; 6] = b"REMEE1";

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| RemError::io(path, e))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| RemError::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| RemError::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    write_bytes(path, text.as_bytes())
}

pub fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| RemError::io(path, e))
}

// ---------------------------------------------------------------- payloads

/// Binary PGM/PPM at 16 bits per sample.
pub fn encode_pnm(img: &Image) -> Vec<u8> {
    let (w, h, c) = (img.width(), img.height(), img.channels());
    let magic = if c == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{w} {h}\n65535\n").into_bytes();
    let plane = img.plane_len();
    for i in 0..plane {
        for ch in 0..c {
            let v = img.data()[ch * plane + i].clamp(0.0, 1.0);
            let q = (v as f64 * 65535.0).round() as u16;
            out.extend_from_slice(&q.to_be_bytes());
        }
    }
    out
}

pub fn decode_pnm(bytes: &[u8], path: &Path) -> Result<Image> {
    let bad = |m: &str| RemError::format(path, m);
    let mut pos = 0usize;
    let mut token = || -> Option<String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        (pos > start).then(|| String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    let channels = match token().as_deref() {
        Some("P5") => 1,
        Some("P6") => 3,
        _ => return Err(bad("expected P5 or P6 header")),
    };
    let mut num = || token().and_then(|t| t.parse::<usize>().ok());
    let (w, h, maxval) = match (num(), num(), num()) {
        (Some(w), Some(h), Some(m)) if w > 0 && h > 0 && (1..=65535).contains(&m) => (w, h, m),
        _ => return Err(bad("malformed width, height or maxval")),
    };
    let data_start = pos + 1;
    let wide = maxval > 255;
    let bps = if wide { 2 } else { 1 };
    let need = w * h * channels * bps;
    if bytes.len() < data_start + need {
        return Err(bad("truncated pixel data"));
    }
    let raw = &bytes[data_start..data_start + need];
    let plane = w * h;
    let mut data = vec![0.0f32; plane * channels];
    for i in 0..plane {
        for ch in 0..channels {
            let k = (i * channels + ch) * bps;
            let v = if wide {
                u16::from_be_bytes([raw[k], raw[k + 1]]) as f32
            } else {
                raw[k] as f32
            };
            data[ch * plane + i] = v / maxval as f32;
        }
    }
    Ok(Image::new(w, h, channels, data)?)
}

pub fn encode_vector(v: &[f32]) -> Vec<u8> {
    let mut out = (v.len() as u64).to_le_bytes().to_vec();
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

pub fn decode_vector(bytes: &[u8], path: &Path) -> Result<Vec<f32>> {
    let mut r = Reader::new(bytes, path);
    let n = r.count()?;
    let v = r.f32s(n)?;
    r.finish()?;
    Ok(v)
}

fn payload_file(sample: &Sample) -> String {
    let ext = match &sample.payload {
        Payload::Image(img) if img.channels() == 1 => "pgm",
        Payload::Image(_) => "ppm",
        Payload::Vector(_) => "vec",
    };
    format!("payloads/{}.{ext}", sample.id)
}

/// Payload after a write/read round trip through its file format.
pub fn quantize_payload(payload: &Payload) -> Payload {
    match payload {
        Payload::Image(img) => Payload::Image(decode_pnm(&encode_pnm(img), Path::new("")).expect("own encoding")),
        Payload::Vector(v) => Payload::Vector(v.clone()),
    }
}

// ---------------------------------------------------------------- manifest

/// Writes payloads under `dir/payloads` and the manifest at
/// `dir/manifest.tsv`. Returns the manifest path.
pub fn write_corpus(dir: &Path, samples: &[Sample]) -> Result<PathBuf> {
    create_dir(&dir.join("payloads"))?;
    let mut manifest = String::from("# id\trole\tfamily\tseed\tchain\tpath\n");
    for s in samples {
        if s.id.contains(['\t', '\n', '/']) {
            return Err(RemError::format(dir, format!("sample id `{}` is not file-safe", s.id)));
        }
        let rel = payload_file(s);
        let bytes = match &s.payload {
            Payload::Image(img) => encode_pnm(img),
            Payload::Vector(v) => encode_vector(v),
        };
        write_bytes(&dir.join(&rel), &bytes)?;
        manifest.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\n",
            s.id,
            s.role,
            s.family.map_or("-".to_string(), |f| f.to_string()),
            s.seed,
            s.chain.as_deref().unwrap_or("-"),
            rel
        ));
    }
    let path = dir.join(MANIFEST_FILE);
    write_text(&path, &manifest)?;
    Ok(path)
}

/// Accepts a manifest file or a directory containing `manifest.tsv`.
pub fn manifest_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    }
}

/// One manifest record with the payload path resolved.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub id: String,
    pub role: Role,
    pub family: Option<Family>,
    pub seed: u64,
    pub chain: Option<String>,
    pub path: PathBuf,
}

pub fn read_manifest(path: &Path) -> Result<Vec<Record>> {
    let path = manifest_path(path);
    let text = fs::read_to_string(&path).map_err(|e| RemError::io(&path, e))?;
    let base = path.parent().unwrap_or(Path::new("")).to_path_buf();
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let bad = |m: String| RemError::format(&path, format!("line {}: {m}", lineno + 1));
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 6 {
            return Err(bad(format!("expected 6 tab-separated fields, got {}", f.len())));
        }
        let role: Role = f[1].parse().map_err(|e: rem_core::Error| bad(e.to_string()))?;
        let family = match f[2] {
            "-" => None,
            s => Some(s.parse::<Family>().map_err(|e| bad(e.to_string()))?),
        };
        let seed = f[3].parse::<u64>().map_err(|e| bad(format!("seed: {e}")))?;
        let chain = (f[4] != "-").then(|| f[4].to_string());
        out.push(Record {
            id: f[0].to_string(),
            role,
            family,
            seed,
            chain,
            path: base.join(f[5]),
        });
    }
    Ok(out)
}

pub fn load_record(r: &Record) -> Result<Sample> {
    let bytes = read_bytes(&r.path)?;
    let payload = match r.path.extension().and_then(|e| e.to_str()) {
        Some("vec") => Payload::Vector(decode_vector(&bytes, &r.path)?),
        _ => Payload::Image(decode_pnm(&bytes, &r.path)?),
    };
    Ok(Sample {
        id: r.id.clone(),
        payload,
        role: r.role,
        family: r.family,
        seed: r.seed,
        chain: r.chain.clone(),
    })
}

pub fn read_corpus(path: &Path) -> Result<Vec<Sample>> {
    read_manifest(path)?.iter().map(load_record).collect()
}

// ---------------------------------------------------------------- binary helpers

struct Writer(Vec<u8>);

impl Writer {
    fn u64(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u64).to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f32s(&mut self, v: &[f32]) {
        for x in v {
            self.0.extend_from_slice(&x.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8], path: &'a Path) -> Self {
        Self { bytes, pos: 0, path }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(RemError::format(self.path, format!("truncated at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn magic(&mut self, m: &[u8; 6]) -> Result<()> {
        if self.take(6)? != m {
            return Err(RemError::format(
                self.path,
                format!("expected magic {}", String::from_utf8_lossy(m)),
            ));
        }
        Ok(())
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    /// A count that must fit in the remaining bytes.
    fn count(&mut self) -> Result<usize> {
        let v = self.u64()?;
        if v > self.bytes.len() as u64 {
            return Err(RemError::format(self.path, format!("implausible count {v}")));
        }
        Ok(v as usize)
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.take(n.checked_mul(4).ok_or_else(|| RemError::format(self.path, "size overflow"))?)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }

    fn dense(&mut self, out_dim: usize, in_dim: usize) -> Result<Dense> {
        let mut d = Dense::zeros(out_dim, in_dim);
        d.w = self.f32s(out_dim * in_dim)?;
        d.b = self.f32s(out_dim)?;
        Ok(d)
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(RemError::format(self.path, format!("{} trailing bytes", self.bytes.len() - self.pos)));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------- checkpoints

pub fn encode_autoencoder(ae: &Autoencoder) -> Result<Vec<u8>> {
    let meta = ae.meta.as_ref().ok_or(rem_core::Error::Untrained("autoencoder"))?;
    let mut w = Writer(AE_MAGIC.to_vec());
    w.u64(ae.input_dim());
    w.u64(ae.latent_dim());
    w.u64(ae.hidden());
    for d in [&ae.enc_hidden, &ae.enc_code, &ae.dec_hidden, &ae.dec_out] {
        w.f32s(&d.w);
        w.f32s(&d.b);
    }
    w.f32s(&meta.latent_mean);
    w.f32s(&meta.latent_std);
    w.u64(meta.epoch_losses.len());
    for &l in &meta.epoch_losses {
        w.f64(l);
    }
    Ok(w.0)
}

pub fn decode_autoencoder(bytes: &[u8], path: &Path) -> Result<Autoencoder> {
    let mut r = Reader::new(bytes, path);
    r.magic(AE_MAGIC)?;
    let (input, d_z, hidden) = (r.count()?, r.count()?, r.count()?);
    let enc_hidden = r.dense(hidden, input)?;
    let enc_code = r.dense(d_z, hidden)?;
    let dec_hidden = r.dense(hidden, d_z)?;
    let dec_out = r.dense(input, hidden)?;
    let latent_mean = r.f32s(d_z)?;
    let latent_std = r.f32s(d_z)?;
    let epochs = r.count()?;
    let epoch_losses = (0..epochs).map(|_| r.f64()).collect::<Result<_>>()?;
    r.finish()?;
    Ok(Autoencoder {
        enc_hidden,
        enc_code,
        dec_hidden,
        dec_out,
        meta: Some(TrainingMeta {
            epoch_losses,
            latent_mean,
            latent_std,
        }),
    })
}

pub fn encode_envelope(m: &EnvelopeModel) -> Result<Vec<u8>> {
    let meta = m.meta.as_ref().ok_or(rem_core::Error::Untrained("envelope model"))?;
    let basis = m.basis.as_ref().ok_or(rem_core::Error::Untrained("envelope model has no tangent basis"))?;
    let mut w = Writer(EE_MAGIC.to_vec());
    let (kind, width, kernel, shape, scale) = match &m.learner {
        Learner::Dense(d) => (0, d.l1.out_dim, 0, (0, 0, 0), 0.0),
        Learner::Texture(t) => (1, t.conv.out_dim, t.kernel, (t.width, t.height, t.channels), t.input_scale),
    };
    for v in [
        kind,
        m.input_dim(),
        width,
        m.feature_dim(),
        kernel,
        shape.0,
        shape.1,
        shape.2,
        m.anchor_dim(),
        basis.p(),
    ] {
        w.u64(v);
    }
    for v in [m.weights.tan, m.weights.anc, m.weights.res, scale] {
        w.f64(v);
    }
    for block in m.blocks() {
        w.f32s(block);
    }
    w.f32s(basis.columns().data());
    w.f64(basis.explained_variance());
    w.u64(meta.epoch_reports.len());
    for (r, &p) in meta.epoch_reports.iter().zip(&meta.basis_p) {
        for v in [r.l_bce, r.l_tan, r.l_anc, r.l_res, r.total, r.grad_norm] {
            w.f64(v);
        }
        w.u64(p);
    }
    Ok(w.0)
}

pub fn decode_envelope(bytes: &[u8], path: &Path) -> Result<EnvelopeModel> {
    let mut r = Reader::new(bytes, path);
    r.magic(EE_MAGIC)?;
    let mut h = [0usize; 10];
    for v in h.iter_mut() {
        *v = r.count()?;
    }
    let [kind, input, width, d_h, kernel, iw, ih, ic, d_a, p] = h;
    let tan = r.f64()?;
    let anc = r.f64()?;
    let res = r.f64()?;
    let scale = r.f64()?;
    let learner = match kind {
        0 => Learner::Dense(DenseLearner {
            l1: r.dense(width, input)?,
            l2: r.dense(d_h, width)?,
        }),
        1 => {
            if iw * ih * ic != input {
                return Err(RemError::format(path, "texture shape does not match input dim"));
            }
            Learner::Texture(TextureLearner {
                width: iw,
                height: ih,
                channels: ic,
                kernel,
                input_scale: scale,
                conv: r.dense(width, ic * kernel * kernel)?,
                head: r.dense(d_h, width)?,
            })
        }
        k => return Err(RemError::format(path, format!("unknown learner kind {k}"))),
    };
    let disc = r.dense(1, d_h)?;
    let proj = Matrix::from_vec(d_a, d_h, r.f32s(d_a * d_h)?)?;
    let u = Matrix::from_vec(d_h, p, r.f32s(d_h * p)?)?;
    let basis = TangentBasis::from_columns(u, r.f64()?)?;
    let epochs = r.count()?;
    let mut meta = EnvelopeMeta::default();
    for _ in 0..epochs {
        let mut v = [0.0; 6];
        for x in v.iter_mut() {
            *x = r.f64()?;
        }
        meta.epoch_reports.push(LossReport {
            l_bce: v[0],
            l_tan: v[1],
            l_anc: v[2],
            l_res: v[3],
            total: v[4],
            grad_norm: v[5],
        });
        meta.basis_p.push(r.count()?);
    }
    r.finish()?;
    Ok(EnvelopeModel {
        learner,
        disc,
        proj,
        basis: Some(basis),
        weights: LossWeights { tan, anc, res },
        meta: Some(meta),
    })
}

pub fn save_autoencoder(path: &Path, ae: &Autoencoder) -> Result<()> {
    write_bytes(path, &encode_autoencoder(ae)?)
}

pub fn load_autoencoder(path: &Path) -> Result<Autoencoder> {
    decode_autoencoder(&read_bytes(path)?, path)
}

/// Writes the checkpoint and, when given, a `<path>.cfg` sidecar.
pub fn save_envelope(path: &Path, m: &EnvelopeModel, sidecar: Option<&str>) -> Result<()> {
    write_bytes(path, &encode_envelope(m)?)?;
    if let Some(text) = sidecar {
        write_text(&sidecar_path(path), text)?;
    }
    Ok(())
}

pub fn load_envelope(path: &Path) -> Result<EnvelopeModel> {
    decode_envelope(&read_bytes(path)?, path)
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".cfg");
    PathBuf::from(s)
}

/// CSV writer over a file, creating parent directories.
pub fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    csv::Writer::from_path(path).map_err(|e| csv_error(path, e))
}

pub fn csv_error(path: &Path, e: csv::Error) -> RemError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => RemError::io(path, io),
        other => RemError::format(path, format!("{other:?}")),
    }
}

pub fn flush<W: Write>(path: &Path, w: &mut csv::Writer<W>) -> Result<()> {
    w.flush().map_err(|e| RemError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rem_core::worldgen::{gen_real, Mode};

    #[test]
    fn pnm_round_trip_within_16_bit_step() {
        for channels in [1, 3] {
            let data: Vec<f32> = (0..channels * 12).map(|i| (i as f32 * 0.37).fract()).collect();
            let img = Image::new(4, 3, channels, data).unwrap();
            let back = decode_pnm(&encode_pnm(&img), Path::new("x")).unwrap();
            assert!(img.same_shape(&back));
            for (a, b) in img.data().iter().zip(back.data()) {
                assert!((a - b).abs() <= 0.5 / 65535.0 + 1e-7);
            }
            let again = encode_pnm(&back);
            assert_eq!(again, encode_pnm(&img));
        }
    }

    #[test]
    fn pnm_reads_8_bit_and_comments() {
        let mut bytes = b"P5\n# note\n2 1\n255\n".to_vec();
        bytes.extend([0u8, 255]);
        let img = decode_pnm(&bytes, Path::new("x")).unwrap();
        assert_eq!(img.data(), &[0.0, 1.0]);
        assert!(decode_pnm(b"P5\n2 1\n255\n\x00", Path::new("x")).is_err());
        assert!(decode_pnm(b"P3\n1 1\n255\n0", Path::new("x")).is_err());
    }

    #[test]
    fn vector_round_trip_and_header() {
        let v = vec![1.5f32, -2.0, 0.25];
        let bytes = encode_vector(&v);
        assert_eq!(&bytes[..8], &3u64.to_le_bytes());
        assert_eq!(bytes.len(), 8 + 12);
        assert_eq!(decode_vector(&bytes, Path::new("x")).unwrap(), v);
        assert!(decode_vector(&bytes[..17], Path::new("x")).is_err());
    }

    #[test]
    fn corpus_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut samples = gen_real(3, 4, Mode::Image).unwrap();
        samples[1].chain = Some("blur(sigma=1,seed=2)".into());
        samples.extend(gen_real(3, 2, Mode::Vector).unwrap().into_iter().map(|mut s| {
            s.id = format!("v{}", s.id);
            s
        }));
        write_corpus(dir.path(), &samples).unwrap();
        let back = read_corpus(dir.path()).unwrap();
        assert_eq!(back.len(), samples.len());
        for (a, b) in samples.iter().zip(&back) {
            assert_eq!((&a.id, a.role, a.family, a.seed, &a.chain), (&b.id, b.role, b.family, b.seed, &b.chain));
            assert_eq!(quantize_payload(&a.payload), b.payload);
        }
    }

    #[test]
    fn manifest_errors_name_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join(MANIFEST_FILE);
        fs::write(&p, "a\treal\t-\t1\t-\n").unwrap();
        let e = read_manifest(&p).unwrap_err().to_string();
        assert!(e.contains("line 1"), "{e}");
        fs::write(&p, "a\tghost\t-\t1\t-\tx.pgm\n").unwrap();
        assert!(read_manifest(&p).is_err());
        assert!(matches!(
            read_manifest(&dir.path().join("none.tsv")),
            Err(RemError::MissingFile(_))
        ));
    }
}
