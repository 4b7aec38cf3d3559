//! Minimal PLY container reader/writer shared by the splat and labeled-point codecs.
//!
//! Only the `vertex` element is decoded; elements that precede it are skipped
//! and anything after it is ignored.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Encoding {
    Ascii,
    BinaryLittleEndian,
    BinaryBigEndian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum ScalarType {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl ScalarType {
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "char" | "int8" => ScalarType::I8,
            "uchar" | "uint8" => ScalarType::U8,
            "short" | "int16" => ScalarType::I16,
            "ushort" | "uint16" => ScalarType::U16,
            "int" | "int32" => ScalarType::I32,
            "uint" | "uint32" => ScalarType::U32,
            "float" | "float32" => ScalarType::F32,
            "double" | "float64" => ScalarType::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            ScalarType::I8 | ScalarType::U8 => 1,
            ScalarType::I16 | ScalarType::U16 => 2,
            ScalarType::I32 | ScalarType::U32 | ScalarType::F32 => 4,
            ScalarType::F64 => 8,
        }
    }

    fn decode(self, b: &[u8], little: bool) -> f64 {
        macro_rules! rd {
            ($t:ty, $n:expr) => {{
                let mut a = [0u8; $n];
                a.copy_from_slice(&b[..$n]);
                if little {
                    <$t>::from_le_bytes(a) as f64
                } else {
                    <$t>::from_be_bytes(a) as f64
                }
            }};
        }
        match self {
            ScalarType::I8 => b[0] as i8 as f64,
            ScalarType::U8 => b[0] as f64,
            ScalarType::I16 => rd!(i16, 2),
            ScalarType::U16 => rd!(u16, 2),
            ScalarType::I32 => rd!(i32, 4),
            ScalarType::U32 => rd!(u32, 4),
            ScalarType::F32 => rd!(f32, 4),
            ScalarType::F64 => rd!(f64, 8),
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) enum PropertyKind {
    Scalar(ScalarType),
    List { count: ScalarType, item: ScalarType },
}

#[derive(Debug, Clone)]
pub(crate) struct Property {
    pub name: String,
    pub kind: PropertyKind,
}

#[derive(Debug, Clone)]
pub(crate) struct Element {
    pub name: String,
    pub count: usize,
    pub properties: Vec<Property>,
}

#[derive(Debug, Clone)]
pub(crate) struct Header {
    pub encoding: Encoding,
    pub elements: Vec<Element>,
    /// Byte length of the header including the `end_header` line.
    pub len: usize,
}

impl Header {
    pub fn vertex(&self) -> Option<&Element> {
        self.elements.iter().find(|e| e.name == "vertex")
    }

    pub fn vertex_count(&self) -> usize {
        self.vertex().map_or(0, |e| e.count)
    }
}

fn format_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Format {
        offset,
        message: message.into(),
    }
}

/// Parses the header. `bytes` only needs to contain the header itself.
pub(crate) fn parse_header(bytes: &[u8]) -> Result<Header> {
    let mut pos = 0usize;
    let next_line = |pos: &mut usize| -> Result<(usize, String)> {
        let start = *pos;
        let rel = bytes[start..]
            .iter()
            .position(|&c| c == b'\n')
            .ok_or_else(|| format_err(start, "unterminated header"))?;
        *pos = start + rel + 1;
        let line = std::str::from_utf8(&bytes[start..start + rel])
            .map_err(|_| format_err(start, "header is not valid UTF-8"))?;
        Ok((start, line.trim_end_matches('\r').to_string()))
    };

    let (off, magic) = next_line(&mut pos)?;
    if magic.trim() != "ply" {
        return Err(format_err(off, "missing `ply` magic"));
    }

    let mut encoding = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        let (off, line) = next_line(&mut pos)?;
        let mut tok = line.split_whitespace();
        match tok.next() {
            None => continue,
            Some("comment") | Some("obj_info") => continue,
            Some("format") => {
                encoding = Some(match tok.next() {
                    Some("ascii") => Encoding::Ascii,
                    Some("binary_little_endian") => Encoding::BinaryLittleEndian,
                    Some("binary_big_endian") => Encoding::BinaryBigEndian,
                    other => {
                        return Err(format_err(off, format!("unknown format {other:?}")));
                    }
                });
            }
            Some("element") => {
                let name = tok
                    .next()
                    .ok_or_else(|| format_err(off, "element without name"))?;
                let count = tok
                    .next()
                    .and_then(|c| c.parse::<usize>().ok())
                    .ok_or_else(|| format_err(off, "element without a valid count"))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            Some("property") => {
                let element = elements
                    .last_mut()
                    .ok_or_else(|| format_err(off, "property before any element"))?;
                let ty = tok
                    .next()
                    .ok_or_else(|| format_err(off, "property without type"))?;
                let kind = if ty == "list" {
                    let count = tok.next().and_then(ScalarType::parse);
                    let item = tok.next().and_then(ScalarType::parse);
                    match (count, item) {
                        (Some(count), Some(item)) => PropertyKind::List { count, item },
                        _ => return Err(format_err(off, "bad list property types")),
                    }
                } else {
                    PropertyKind::Scalar(
                        ScalarType::parse(ty)
                            .ok_or_else(|| format_err(off, format!("unknown type `{ty}`")))?,
                    )
                };
                let name = tok
                    .next()
                    .ok_or_else(|| format_err(off, "property without name"))?;
                element.properties.push(Property {
                    name: name.to_string(),
                    kind,
                });
            }
            Some("end_header") => break,
            Some(other) => {
                return Err(format_err(off, format!("unexpected header keyword `{other}`")));
            }
        }
    }

    let encoding = encoding.ok_or_else(|| format_err(0, "missing format line"))?;
    Ok(Header {
        encoding,
        elements,
        len: pos,
    })
}

/// Reads only as much of `reader` as needed to parse the header.
pub(crate) fn read_header<R: std::io::BufRead>(reader: &mut R) -> Result<Header> {
    let mut buf = Vec::new();
    loop {
        let start = buf.len();
        let n = reader
            .read_until(b'\n', &mut buf)
            .map_err(|e| format_err(start, e.to_string()))?;
        if n == 0 {
            return Err(format_err(start, "unterminated header"));
        }
        if buf[start..].trim_ascii_end() == b"end_header" {
            return parse_header(&buf);
        }
        if buf.len() > 1 << 20 {
            return Err(format_err(start, "header exceeds 1 MiB"));
        }
    }
}

/// Streams the vertex element row by row. Each row is handed over as one
/// `f64` per vertex property, in header order.
pub(crate) fn for_each_vertex(
    bytes: &[u8],
    header: &Header,
    mut f: impl FnMut(usize, &[f64]) -> Result<()>,
) -> Result<()> {
    match header.encoding {
        Encoding::Ascii => for_each_vertex_ascii(bytes, header, &mut f),
        Encoding::BinaryLittleEndian => for_each_vertex_binary(bytes, header, true, &mut f),
        Encoding::BinaryBigEndian => for_each_vertex_binary(bytes, header, false, &mut f),
    }
}

fn for_each_vertex_binary(
    bytes: &[u8],
    header: &Header,
    little: bool,
    f: &mut impl FnMut(usize, &[f64]) -> Result<()>,
) -> Result<()> {
    let mut pos = header.len;
    let read_scalar = |pos: &mut usize, ty: ScalarType| -> Result<f64> {
        let end = *pos + ty.size();
        if end > bytes.len() {
            return Err(format_err(*pos, "unexpected end of data"));
        }
        let v = ty.decode(&bytes[*pos..end], little);
        *pos = end;
        Ok(v)
    };

    for element in &header.elements {
        if element.name != "vertex" {
            // skip preceding elements
            for _ in 0..element.count {
                for p in &element.properties {
                    match p.kind {
                        PropertyKind::Scalar(t) => pos += t.size(),
                        PropertyKind::List { count, item } => {
                            let n = read_scalar(&mut pos, count)? as usize;
                            pos += n * item.size();
                        }
                    }
                }
            }
            continue;
        }

        let mut types = Vec::with_capacity(element.properties.len());
        for p in &element.properties {
            match p.kind {
                PropertyKind::Scalar(t) => types.push(t),
                PropertyKind::List { .. } => {
                    return Err(format_err(
                        pos,
                        format!("list property `{}` in vertex element", p.name),
                    ))
                }
            }
        }
        let stride: usize = types.iter().map(|t| t.size()).sum();
        let needed = element.count.checked_mul(stride).unwrap_or(usize::MAX);
        if bytes.len().saturating_sub(pos) < needed {
            let full_rows = (bytes.len().saturating_sub(pos)) / stride.max(1);
            return Err(format_err(
                pos + full_rows * stride,
                format!(
                    "vertex data truncated: {} of {} rows present",
                    full_rows, element.count
                ),
            ));
        }
        let mut row = vec![0.0f64; types.len()];
        for index in 0..element.count {
            let mut off = pos + index * stride;
            for (slot, &ty) in row.iter_mut().zip(&types) {
                *slot = ty.decode(&bytes[off..], little);
                off += ty.size();
            }
            f(index, &row)?;
        }
        return Ok(());
    }
    Ok(())
}

fn for_each_vertex_ascii(
    bytes: &[u8],
    header: &Header,
    f: &mut impl FnMut(usize, &[f64]) -> Result<()>,
) -> Result<()> {
    let body = &bytes[header.len..];
    let mut pos = 0usize;
    let mut next_token = || -> Result<(usize, &str)> {
        while pos < body.len() && body[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < body.len() && !body[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(format_err(header.len + start, "unexpected end of data"));
        }
        let s = std::str::from_utf8(&body[start..pos])
            .map_err(|_| format_err(header.len + start, "non-UTF-8 token"))?;
        Ok((header.len + start, s))
    };
    let parse_num = |off: usize, s: &str| -> Result<f64> {
        s.parse::<f64>()
            .map_err(|_| format_err(off, format!("invalid number `{s}`")))
    };

    for element in &header.elements {
        if element.name != "vertex" {
            for _ in 0..element.count {
                for p in &element.properties {
                    match p.kind {
                        PropertyKind::Scalar(_) => {
                            next_token()?;
                        }
                        PropertyKind::List { .. } => {
                            let (off, s) = next_token()?;
                            let n = parse_num(off, s)? as usize;
                            for _ in 0..n {
                                next_token()?;
                            }
                        }
                    }
                }
            }
            continue;
        }
        let mut row = vec![0.0f64; element.properties.len()];
        for index in 0..element.count {
            for (slot, p) in row.iter_mut().zip(&element.properties) {
                if let PropertyKind::List { .. } = p.kind {
                    return Err(format_err(
                        header.len + pos,
                        format!("list property `{}` in vertex element", p.name),
                    ));
                }
                let (off, s) = next_token()?;
                *slot = parse_num(off, s)?;
            }
            f(index, &row)?;
        }
        return Ok(());
    }
    Ok(())
}

/// Writes a binary little-endian header for a single vertex element.
pub(crate) fn write_header(out: &mut Vec<u8>, count: usize, properties: &[(&str, &str)]) {
    use std::fmt::Write;
    let mut s = String::new();
    s.push_str("ply\nformat binary_little_endian 1.0\n");
    let _ = writeln!(s, "element vertex {count}");
    for (ty, name) in properties {
        let _ = writeln!(s, "property {ty} {name}");
    }
    s.push_str("end_header\n");
    out.extend_from_slice(s.as_bytes());
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_offsets_are_reported() {
        let bad = b"ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nbogus\nend_header\n";
        match parse_header(bad) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 55),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn skips_preceding_elements() {
        let mut bytes = b"ply\nformat ascii 1.0\nelement camera 1\nproperty list uchar int idx\nelement vertex 2\nproperty float x\nproperty uchar l\nend_header\n".to_vec();
        bytes.extend_from_slice(b"3 1 2 3\n0.5 7\n-1 9\n");
        let header = parse_header(&bytes).unwrap();
        let mut rows = Vec::new();
        for_each_vertex(&bytes, &header, |_, r| {
            rows.push(r.to_vec());
            Ok(())
        })
        .unwrap();
        assert_eq!(rows, vec![vec![0.5, 7.0], vec![-1.0, 9.0]]);
    }

    #[test]
    fn truncated_binary_is_a_format_error() {
        let mut out = Vec::new();
        write_header(&mut out, 3, &[("float", "x")]);
        out.extend_from_slice(&1.0f32.to_le_bytes());
        let header = parse_header(&out).unwrap();
        let err = for_each_vertex(&out, &header, |_, _| Ok(())).unwrap_err();
        assert!(matches!(err, Error::Format { .. }));
    }
}
