//! Binary persistence: feature maps (`FMAP`), scene checkpoints (`GSPL`) and
//! toy extractor checkpoints (`XTRC`). All integers and floats are little
//! endian; feature maps and scenes store `f32`, extractor weights `f64`.

use std::fs;
use std::path::Path;

use featsplat_core::extract::{Layout, ToyPatchEncoder};
use featsplat_core::scene::sh;
use featsplat_core::{FeatureDecoder, FeatureImage, Gaussian3D, Scene};

use crate::error::{CliError, CliResult};

pub const FMAP_MAGIC: &[u8; 4] = b"FMAP";
pub const GSPL_MAGIC: &[u8; 4] = b"GSPL";
pub const XTRC_MAGIC: &[u8; 4] = b"XTRC";
pub const FORMAT_VERSION: u32 = 1;
pub const FMAP_HEADER_LEN: usize = 20;

/// Sequential little-endian reader over an in-memory file.
struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or("truncated file")?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f64, String> {
        let v = f32::from_le_bytes(self.take(4)?.try_into().unwrap());
        if !v.is_finite() {
            return Err(format!("non-finite value at byte {}", self.pos - 4));
        }
        Ok(v as f64)
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f64>, String> {
        (0..n).map(|_| self.f32()).collect()
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn header(&mut self, magic: &[u8; 4]) -> Result<(), String> {
        let m = self.take(4)?;
        if m != magic {
            return Err(format!("bad magic {:?}, expected {:?}", String::from_utf8_lossy(m), std::str::from_utf8(magic).unwrap()));
        }
        let v = self.u32()?;
        if v != FORMAT_VERSION {
            return Err(format!("unsupported version {v}"));
        }
        Ok(())
    }
}

#[derive(Default)]
struct Writer {
    bytes: Vec<u8>,
}

impl Writer {
    fn u32(&mut self, v: usize) -> Result<(), String> {
        let v = u32::try_from(v).map_err(|_| format!("{v} does not fit in u32"))?;
        self.bytes.extend_from_slice(&v.to_le_bytes());
        Ok(())
    }

    fn f32(&mut self, v: f64) -> Result<(), String> {
        let f = v as f32;
        if !f.is_finite() {
            return Err(format!("value {v} is not representable as a finite f32"));
        }
        self.bytes.extend_from_slice(&f.to_le_bytes());
        Ok(())
    }

    fn f32s(&mut self, vs: &[f64]) -> Result<(), String> {
        vs.iter().try_for_each(|&v| self.f32(v))
    }
}

pub fn encode_fmap(img: &FeatureImage) -> Result<Vec<u8>, String> {
    let mut w = Writer::default();
    w.bytes.reserve(FMAP_HEADER_LEN + 4 * img.data.len());
    w.bytes.extend_from_slice(FMAP_MAGIC);
    w.u32(FORMAT_VERSION as usize)?;
    w.u32(img.height)?;
    w.u32(img.width)?;
    w.u32(img.channels)?;
    w.f32s(&img.data)?;
    Ok(w.bytes)
}

pub fn decode_fmap(bytes: &[u8]) -> Result<FeatureImage, String> {
    let mut r = Reader::new(bytes);
    r.header(FMAP_MAGIC)?;
    let (h, w, c) = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
    let n = h.checked_mul(w).and_then(|v| v.checked_mul(c)).ok_or("dimensions overflow")?;
    if r.remaining() != 4 * n {
        return Err(format!("payload is {} bytes, header says {h}×{w}×{c} needs {}", r.remaining(), 4 * n));
    }
    let data = r.f32s(n)?;
    FeatureImage::from_vec(h, w, c, data).map_err(|e| e.to_string())
}

/// Reads only the `(height, width, channels)` header of a feature map.
pub fn fmap_shape(path: &Path) -> CliResult<(usize, usize, usize)> {
    use std::io::Read;
    let mut f = fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut head = [0u8; FMAP_HEADER_LEN];
    f.read_exact(&mut head).map_err(|e| CliError::io(path, e))?;
    let mut r = Reader::new(&head);
    r.header(FMAP_MAGIC).map_err(|m| CliError::format(path, m))?;
    let dims = (|| Ok::<_, String>((r.u32()? as usize, r.u32()? as usize, r.u32()? as usize)))();
    dims.map_err(|m| CliError::format(path, m))
}

pub fn encode_gspl(scene: &Scene) -> Result<Vec<u8>, String> {
    scene.validate().map_err(|e| e.to_string())?;
    let mut w = Writer::default();
    w.bytes.extend_from_slice(GSPL_MAGIC);
    w.u32(FORMAT_VERSION as usize)?;
    w.u32(scene.len())?;
    w.u32(scene.feature_dim)?;
    w.u32(scene.sh_degree)?;
    for g in &scene.gaussians {
        w.f32s(&g.mean)?;
        w.f32s(&g.log_scale)?;
        w.f32s(&g.rotation)?;
        w.f32(g.opacity_logit)?;
        w.f32s(&g.sh)?;
        w.f32s(&g.feature)?;
    }
    w.f32s(&scene.decoder.kernel)?;
    w.f32s(&scene.decoder.bias)?;
    Ok(w.bytes)
}

/// Decodes a scene checkpoint. The decoder output width is not stored; it
/// follows from the bytes left after the Gaussian records.
pub fn decode_gspl(bytes: &[u8]) -> Result<Scene, String> {
    let mut r = Reader::new(bytes);
    r.header(GSPL_MAGIC)?;
    let (m, d, l) = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
    if l > sh::MAX_SH_DEGREE {
        return Err(format!("SH degree {l} exceeds {}", sh::MAX_SH_DEGREE));
    }
    let n_sh = 3 * sh::num_coeffs(l);
    let record = 3 + 3 + 4 + 1 + n_sh + d;
    if m.checked_mul(4 * record).map_or(true, |b| b > r.remaining()) {
        return Err(format!("{m} Gaussians do not fit in {} bytes", r.remaining()));
    }
    let mut gaussians = Vec::with_capacity(m);
    for _ in 0..m {
        let v = r.f32s(record)?;
        gaussians.push(Gaussian3D {
            mean: [v[0], v[1], v[2]],
            log_scale: [v[3], v[4], v[5]],
            rotation: [v[6], v[7], v[8], v[9]],
            opacity_logit: v[10],
            sh: v[11..11 + n_sh].to_vec(),
            feature: v[11 + n_sh..].to_vec(),
        });
    }
    let rest = r.remaining();
    let per_out = 4 * (9 * d + 1);
    if rest == 0 || rest % per_out != 0 {
        return Err(format!("{rest} trailing bytes are not a 3×3 decoder with {d} input channels"));
    }
    let c_out = rest / per_out;
    let kernel = r.f32s(c_out * d * 9)?;
    let bias = r.f32s(c_out)?;
    let decoder = FeatureDecoder { c_in: d, c_out, kernel, bias };
    let scene = Scene { gaussians, feature_dim: d, sh_degree: l, decoder };
    scene.validate().map_err(|e| e.to_string())?;
    Ok(scene)
}

pub fn encode_xtrc(enc: &ToyPatchEncoder) -> Result<Vec<u8>, String> {
    enc.validate().map_err(|e| e.to_string())?;
    let mut w = Writer::default();
    w.bytes.extend_from_slice(XTRC_MAGIC);
    w.u32(FORMAT_VERSION as usize)?;
    w.u32(enc.patch_size)?;
    w.u32(enc.channels)?;
    w.u32(enc.params.len())?;
    for v in &enc.params {
        w.bytes.extend_from_slice(&v.to_le_bytes());
    }
    Ok(w.bytes)
}

pub fn decode_xtrc(bytes: &[u8]) -> Result<ToyPatchEncoder, String> {
    let mut r = Reader::new(bytes);
    r.header(XTRC_MAGIC)?;
    let (p, c, n) = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
    if p == 0 || c == 0 {
        return Err("patch size and channels must be positive".into());
    }
    let expected = Layout::new(p, c).len;
    if n != expected || r.remaining() != 8 * n {
        return Err(format!("expected {expected} parameters for patch {p} and {c} channels, file has {n}"));
    }
    let params = (0..n).map(|_| f64::from_le_bytes(r.take(8).unwrap().try_into().unwrap())).collect();
    let enc = ToyPatchEncoder { patch_size: p, channels: c, params };
    enc.validate().map_err(|e| e.to_string())?;
    Ok(enc)
}

fn read(path: &Path) -> CliResult<Vec<u8>> {
    fs::read(path).map_err(|e| CliError::io(path, e))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

pub fn load_fmap(path: &Path) -> CliResult<FeatureImage> {
    decode_fmap(&read(path)?).map_err(|m| CliError::format(path, m))
}

pub fn save_fmap(path: &Path, img: &FeatureImage) -> CliResult<()> {
    write_bytes(path, &encode_fmap(img).map_err(|m| CliError::format(path, m))?)
}

pub fn load_scene(path: &Path) -> CliResult<Scene> {
    decode_gspl(&read(path)?).map_err(|m| CliError::format(path, m))
}

pub fn save_scene(path: &Path, scene: &Scene) -> CliResult<()> {
    write_bytes(path, &encode_gspl(scene).map_err(|m| CliError::format(path, m))?)
}

pub fn load_extractor(path: &Path) -> CliResult<ToyPatchEncoder> {
    decode_xtrc(&read(path)?).map_err(|m| CliError::format(path, m))
}

pub fn save_extractor(path: &Path, enc: &ToyPatchEncoder) -> CliResult<()> {
    write_bytes(path, &encode_xtrc(enc).map_err(|m| CliError::format(path, m))?)
}

/// Rounds every parameter to `f32`, the precision a checkpoint stores.
pub fn quantize_scene(scene: &Scene) -> Scene {
    let q = |v: &mut f64| *v = *v as f32 as f64;
    let mut s = scene.clone();
    for g in &mut s.gaussians {
        g.mean.iter_mut().chain(&mut g.log_scale).chain(&mut g.rotation).chain(&mut g.sh).chain(&mut g.feature).for_each(q);
        q(&mut g.opacity_logit);
    }
    s.decoder.kernel.iter_mut().chain(&mut s.decoder.bias).for_each(q);
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use featsplat_core::synthetic::{random_scene, GaussianSampler};
    use rand::{Rng, SeedableRng};
    use proptest::prelude::{Just, Strategy};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn fmap_layout_is_header_then_channel_innermost_f32() {
        let img = FeatureImage::from_vec(1, 2, 2, vec![1.0, 2.0, 3.0, -0.5]).unwrap();
        let b = encode_fmap(&img).unwrap();
        assert_eq!(b.len(), 20 + 4 * 4);
        assert_eq!(&b[..4], b"FMAP");
        assert_eq!(u32::from_le_bytes(b[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(b[8..12].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(b[12..16].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(b[16..20].try_into().unwrap()), 2);
        assert_eq!(f32::from_le_bytes(b[28..32].try_into().unwrap()), 3.0);
        assert_eq!(decode_fmap(&b).unwrap(), img);
    }

    #[test]
    fn fmap_rejects_bad_length_magic_and_nan() {
        let img = FeatureImage::zeros(2, 2, 3);
        let b = encode_fmap(&img).unwrap();
        assert!(decode_fmap(&b[..b.len() - 1]).is_err());
        let mut bad = b.clone();
        bad[0] = b'X';
        assert!(decode_fmap(&bad).unwrap_err().contains("magic"));
        let mut v2 = b.clone();
        v2[4] = 2;
        assert!(decode_fmap(&v2).unwrap_err().contains("version"));
        let mut nan = b;
        nan[20..24].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(decode_fmap(&nan).unwrap_err().contains("non-finite"));
        assert!(encode_fmap(&FeatureImage::filled(1, 1, &[1e300])).is_err());
    }

    #[test]
    fn gspl_round_trip_is_bit_identical_and_derives_decoder_width() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut scene = random_scene(&mut rng, 17, 5, 2, &GaussianSampler::default());
        scene.decoder = FeatureDecoder::random(5, 11, &mut rng);
        let bytes = encode_gspl(&scene).unwrap();
        let loaded = decode_gspl(&bytes).unwrap();
        assert_eq!(loaded.decoder.c_out, 11);
        assert_eq!(loaded, quantize_scene(&scene));
        assert_eq!(encode_gspl(&loaded).unwrap(), bytes);
    }

    #[test]
    fn gspl_rejects_a_ragged_decoder_tail() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let scene = random_scene(&mut rng, 3, 4, 0, &GaussianSampler::default());
        let mut bytes = encode_gspl(&scene).unwrap();
        bytes.extend_from_slice(&0f32.to_le_bytes());
        assert!(decode_gspl(&bytes).is_err());
        assert!(decode_gspl(&bytes[..30]).is_err());
    }

    #[test]
    fn xtrc_round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut enc = ToyPatchEncoder::random(4, 6, &mut rng);
        enc.params.iter_mut().for_each(|v| *v += rng.gen::<f64>() * 1e-9);
        let b = encode_xtrc(&enc).unwrap();
        assert_eq!(decode_xtrc(&b).unwrap(), enc);
        assert!(decode_xtrc(&b[..b.len() - 8]).is_err());
    }

    proptest::proptest! {
        #[test]
        fn fmap_round_trips_any_f32_image(
            (h, w, c, data) in (1usize..6, 1usize..6, 1usize..5).prop_flat_map(|(h, w, c)| {
                (Just(h), Just(w), Just(c), proptest::collection::vec(-1e30f32..1e30, h * w * c))
            }),
        ) {
            let img = FeatureImage::from_vec(h, w, c, data.iter().map(|&v| v as f64).collect()).unwrap();
            let bytes = encode_fmap(&img).unwrap();
            proptest::prop_assert_eq!(bytes.len(), 20 + 4 * h * w * c);
            proptest::prop_assert_eq!(decode_fmap(&bytes).unwrap(), img);
        }
    }
}
