//! Model persistence: a checksummed little-endian binary for the parameter
//! arrays plus a JSON sidecar recording how the model was trained.

use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Write};
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::binio::{CrcReader, CrcWriter};
use crate::dataset::NormStats;

use super::net::{ConvParams, DenseParams, Network, NetworkSpec, Variant, SCAN_CHANNELS};
use super::train::TrainConfig;
use super::NnError;

const MAGIC: &[u8; 4] = b"RPNN";
const VERSION: u32 = 1;

/// Sidecar contents: the training configuration and where the standardizer
/// statistics came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub variant: Variant,
    pub train: TrainConfig,
    /// Train-split statistics baked into the standardizer.
    pub norm: NormStats,
    /// Dataset file the model was trained from, if it came from disk.
    #[serde(default)]
    pub dataset_file: Option<String>,
    /// CRC32 trailer of that dataset file at training time.
    #[serde(default)]
    pub dataset_crc32: Option<u32>,
}

/// Sidecar path: the model path with ".json" appended.
pub fn model_sidecar_path(path: &Path) -> PathBuf {
    let mut os = path.as_os_str().to_owned();
    os.push(".json");
    PathBuf::from(os)
}

fn map_io(e: std::io::Error) -> NnError {
    if e.kind() == ErrorKind::UnexpectedEof {
        NnError::Truncated
    } else {
        NnError::Io(e)
    }
}

fn write_array<W: Write>(w: &mut CrcWriter<W>, dims: &[usize], data: &[f32]) -> std::io::Result<()> {
    w.write_u32(dims.len() as u32)?;
    for &d in dims {
        w.write_u32(d as u32)?;
    }
    for &v in data {
        w.write_f32(v)?;
    }
    Ok(())
}

fn read_array<R: std::io::Read>(
    r: &mut CrcReader<R>,
    expect_ndim: usize,
) -> Result<(Vec<usize>, Vec<f32>), NnError> {
    let ndim = r.read_u32().map_err(map_io)? as usize;
    if ndim != expect_ndim {
        return Err(NnError::Invalid(format!("array rank {ndim}, expected {expect_ndim}")));
    }
    let mut dims = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        let d = r.read_u32().map_err(map_io)? as usize;
        if d == 0 || d > 1 << 24 {
            return Err(NnError::Invalid(format!("implausible array extent {d}")));
        }
        dims.push(d);
    }
    let n: usize = dims.iter().product();
    let mut data = Vec::with_capacity(n);
    for _ in 0..n {
        data.push(r.read_f32().map_err(map_io)?);
    }
    Ok((dims, data))
}

/// Writes the model binary and its JSON sidecar. Arrays are stored in a fixed
/// order: standardizer statistics and affine, then each conv's weight and
/// bias, then each dense layer's.
pub fn save_model(net: &Network<f32>, meta: &ModelMeta, path: &Path) -> Result<(), NnError> {
    let mut w = CrcWriter::new(BufWriter::new(File::create(path)?));
    w.write_bytes(MAGIC)?;
    w.write_u32(VERSION)?;
    w.write_u8(net.spec.variant.tag())?;
    w.write_u32(net.spec.rays as u32)?;
    for arr in [&net.mean, &net.std, &net.alpha, &net.beta] {
        write_array(&mut w, &[arr.len()], arr.as_slice().unwrap())?;
    }
    for conv in &net.convs {
        let (a, b, c) = conv.weight.dim();
        write_array(&mut w, &[a, b, c], conv.weight.as_slice().unwrap())?;
        write_array(&mut w, &[conv.bias.len()], conv.bias.as_slice().unwrap())?;
    }
    for dense in &net.denses {
        let (a, b) = dense.weight.dim();
        write_array(&mut w, &[a, b], dense.weight.as_slice().unwrap())?;
        write_array(&mut w, &[dense.bias.len()], dense.bias.as_slice().unwrap())?;
    }
    w.finish()?;

    let json = serde_json::to_string_pretty(meta)
        .map_err(|e| NnError::Invalid(format!("sidecar encode: {e}")))?;
    let mut f = File::create(model_sidecar_path(path))?;
    f.write_all(json.as_bytes())?;
    f.write_all(b"\n")?;
    Ok(())
}

fn vec1(dims: &[usize], data: Vec<f32>, what: &str, len: usize) -> Result<Array1<f32>, NnError> {
    if dims != [len] {
        return Err(NnError::Invalid(format!("{what} has extent {dims:?}, expected [{len}]")));
    }
    Ok(Array1::from_vec(data))
}

/// True when the last four bytes are the CRC32 of everything before them.
fn payload_crc_ok(buf: &[u8]) -> bool {
    buf.len() >= 4 && {
        let (body, tail) = buf.split_at(buf.len() - 4);
        crc32fast::hash(body) == u32::from_le_bytes(tail.try_into().unwrap())
    }
}

/// Reads a model binary and its sidecar back. The architecture is rebuilt
/// from the stored variant, ray count, and array shapes, then re-validated
/// against the shape chain.
pub fn load_model(path: &Path) -> Result<(Network<f32>, ModelMeta), NnError> {
    let buf = std::fs::read(path)?;
    let (net, variant) = match parse_model(&buf) {
        // A malformed field inside an intact checksum is a writer bug; the
        // same bytes failing the checksum means corruption, report that.
        Err(NnError::Invalid(_)) if !payload_crc_ok(&buf) => Err(NnError::ChecksumMismatch),
        other => other,
    }?;

    let meta_path = model_sidecar_path(path);
    let meta: ModelMeta = serde_json::from_reader(BufReader::new(File::open(&meta_path).map_err(
        |e| NnError::Invalid(format!("sidecar {}: {e}", meta_path.display())),
    )?))
    .map_err(|e| NnError::Invalid(format!("sidecar decode: {e}")))?;
    if meta.variant != variant {
        return Err(NnError::Invalid("sidecar variant disagrees with the model file".into()));
    }
    Ok((net, meta))
}

fn parse_model(buf: &[u8]) -> Result<(Network<f32>, Variant), NnError> {
    let mut r = CrcReader::new(buf);
    let mut magic = [0u8; 4];
    r.read_bytes(&mut magic).map_err(map_io)?;
    if &magic != MAGIC {
        return Err(NnError::BadMagic);
    }
    let version = r.read_u32().map_err(map_io)?;
    if version != VERSION {
        return Err(NnError::UnsupportedVersion(version));
    }
    let tag = r.read_u8().map_err(map_io)?;
    let variant =
        Variant::from_tag(tag).ok_or_else(|| NnError::Invalid(format!("unknown variant tag {tag}")))?;
    let rays = r.read_u32().map_err(map_io)? as usize;

    let mut stats = Vec::with_capacity(4);
    for what in ["mean", "std", "alpha", "beta"] {
        let (dims, data) = read_array(&mut r, 1)?;
        stats.push(vec1(&dims, data, what, SCAN_CHANNELS)?);
    }
    let beta = stats.pop().unwrap();
    let alpha = stats.pop().unwrap();
    let std = stats.pop().unwrap();
    let mean = stats.pop().unwrap();

    let mut convs = Vec::with_capacity(3);
    let mut conv_channels = [0usize; 3];
    for ch in &mut conv_channels {
        let (dims, data) = read_array(&mut r, 3)?;
        let weight = Array3::from_shape_vec((dims[0], dims[1], dims[2]), data)
            .map_err(|e| NnError::Invalid(format!("conv weight: {e}")))?;
        let (bdims, bdata) = read_array(&mut r, 1)?;
        let bias = vec1(&bdims, bdata, "conv bias", dims[0])?;
        *ch = dims[0];
        convs.push(ConvParams { weight, bias });
    }

    let mut denses = Vec::with_capacity(3);
    for _ in 0..3 {
        let (dims, data) = read_array(&mut r, 2)?;
        let weight = Array2::from_shape_vec((dims[0], dims[1]), data)
            .map_err(|e| NnError::Invalid(format!("dense weight: {e}")))?;
        let (bdims, bdata) = read_array(&mut r, 1)?;
        let bias = vec1(&bdims, bdata, "dense bias", dims[0])?;
        denses.push(DenseParams { weight, bias });
    }

    if !r.verify_trailer().map_err(map_io)? {
        return Err(NnError::ChecksumMismatch);
    }

    let spec = NetworkSpec { variant, rays, conv_channels, hidden: denses[0].weight.dim().0 };
    spec.validate()?;
    let expect_in = [
        (SCAN_CHANNELS, "conv1"),
        (conv_channels[0], "conv2"),
        (conv_channels[1], "conv3"),
    ];
    for (i, &(c_in, name)) in expect_in.iter().enumerate() {
        if convs[i].weight.dim().1 != c_in || convs[i].weight.dim().2 != 5 {
            return Err(NnError::Invalid(format!("{name} kernel shape mismatch")));
        }
    }
    let dense_in = [spec.fc1_input(), spec.hidden, spec.hidden];
    let dense_out = [spec.hidden, spec.hidden, 2];
    for i in 0..3 {
        if denses[i].weight.dim() != (dense_out[i], dense_in[i]) {
            return Err(NnError::Invalid(format!(
                "fc{} is {:?}, expected {:?}",
                i + 1,
                denses[i].weight.dim(),
                (dense_out[i], dense_in[i])
            )));
        }
    }
    if mean.iter().chain(&std).chain(&alpha).chain(&beta).any(|v| !v.is_finite())
        || std.iter().any(|&v| v <= 0.0)
    {
        return Err(NnError::Invalid("bad standardizer statistics".into()));
    }

    Ok((Network { spec, mean, std, alpha, beta, convs, denses }, variant))
}
