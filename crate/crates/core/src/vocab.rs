//! Token strings, modality framing and unified ID streams for language-model vocabularies.
//!
//! Image code `h` is the token `<IMG_h>` (0-based, decimal, no padding).

use std::fmt;

use crate::codebook::HierarchicalCodebook;
use crate::error::{Error, ParseError, Result};
use crate::grid::TokenGrid;

pub const START_IMG: &str = "<start_of_image>";
pub const END_IMG: &str = "<end_of_image>";
pub const IM_START: &str = "<|im_start|>";
pub const IM_END: &str = "<|im_end|>";

fn check_range(h: u32, vocab_size: u32) -> Result<()> {
    if h >= vocab_size {
        return Err(Error::Range(format!(
            "image token {h} outside vocabulary of {vocab_size}"
        )));
    }
    Ok(())
}

/// `"<IMG_h>"` for `h < vocab_size`.
pub fn token_string(h: u32, vocab_size: u32) -> Result<String> {
    check_range(h, vocab_size)?;
    Ok(format!("<IMG_{h}>"))
}

fn parse_digits(s: &str) -> Option<u32> {
    let digits = s.strip_prefix("<IMG_")?.strip_suffix('>')?;
    let canonical =
        !digits.is_empty() && digits.bytes().all(|b| b.is_ascii_digit()) && (digits == "0" || !digits.starts_with('0'));
    if canonical {
        digits.parse().ok()
    } else {
        None
    }
}

/// Inverse of [`token_string`]. Leading zeros, signs and whitespace are rejected.
pub fn parse_token(s: &str, vocab_size: u32) -> Result<u32> {
    let h = parse_digits(s).ok_or_else(|| Error::from(ParseError::Token(s.to_string())))?;
    check_range(h, vocab_size)?;
    Ok(h)
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Atom {
    Text(String),
    Img(u32),
    StartImg,
    EndImg,
    ImStart,
    ImEnd,
}

impl Atom {
    fn opens(&self) -> Option<Atom> {
        match self {
            Atom::StartImg => Some(Atom::EndImg),
            Atom::ImStart => Some(Atom::ImEnd),
            _ => None,
        }
    }

    fn is_close(&self) -> bool {
        matches!(self, Atom::EndImg | Atom::ImEnd)
    }
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Atom::Text(t) => f.write_str(t),
            Atom::Img(h) => write!(f, "<IMG_{h}>"),
            Atom::StartImg => f.write_str(START_IMG),
            Atom::EndImg => f.write_str(END_IMG),
            Atom::ImStart => f.write_str(IM_START),
            Atom::ImEnd => f.write_str(IM_END),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameMode {
    /// `<|im_start|> … <|im_end|>`
    Understanding,
    /// `<start_of_image> … <end_of_image>`
    Generation,
}

impl FrameMode {
    fn delimiters(self) -> (Atom, Atom) {
        match self {
            FrameMode::Understanding => (Atom::ImStart, Atom::ImEnd),
            FrameMode::Generation => (Atom::StartImg, Atom::EndImg),
        }
    }
}

/// Atom sequence whose delimiter pairs are balanced and non-nested, with every
/// image atom inside a pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VocabFrame {
    atoms: Vec<Atom>,
}

impl VocabFrame {
    pub fn new(atoms: Vec<Atom>) -> Result<Self> {
        let mut open: Option<Atom> = None;
        for (pos, atom) in atoms.iter().enumerate() {
            if let Some(close) = atom.opens() {
                if open.is_some() {
                    return Err(Error::Frame(format!("nested delimiter {atom} at position {pos}")));
                }
                open = Some(close);
            } else if atom.is_close() {
                if open.as_ref() != Some(atom) {
                    return Err(Error::Frame(format!("unmatched {atom} at position {pos}")));
                }
                open = None;
            } else if matches!(atom, Atom::Img(_)) && open.is_none() {
                return Err(Error::Frame(format!(
                    "{atom} at position {pos} is outside any delimiter pair"
                )));
            }
        }
        if let Some(close) = open {
            return Err(Error::Frame(format!("missing closing {close}")));
        }
        Ok(Self { atoms })
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn into_atoms(self) -> Vec<Atom> {
        self.atoms
    }

    /// Concatenated token strings.
    pub fn to_text(&self) -> String {
        self.atoms.iter().map(|a| a.to_string()).collect()
    }

    /// Splits `text` into special tokens and the text chunks between them.
    /// Adjacent text merges into one chunk, so `parse_text(f.to_text())` equals `f`
    /// whenever no two text atoms of `f` are adjacent.
    pub fn parse_text(text: &str) -> Result<Self> {
        let mut atoms = Vec::new();
        let mut chunk_start = 0;
        let mut pos = 0;
        while pos < text.len() {
            let rest = &text[pos..];
            let special = [
                (START_IMG, Atom::StartImg),
                (END_IMG, Atom::EndImg),
                (IM_START, Atom::ImStart),
                (IM_END, Atom::ImEnd),
            ]
            .into_iter()
            .find(|(s, _)| rest.starts_with(s))
            .map(|(s, a)| (s.len(), a))
            .or_else(|| {
                if !rest.starts_with("<IMG_") {
                    return None;
                }
                let end = rest.find('>')? + 1;
                parse_digits(&rest[..end]).map(|h| (end, Atom::Img(h)))
            });
            match special {
                Some((len, atom)) => {
                    if chunk_start < pos {
                        atoms.push(Atom::Text(text[chunk_start..pos].to_string()));
                    }
                    atoms.push(atom);
                    pos += len;
                    chunk_start = pos;
                }
                None => pos += rest.chars().next().map_or(1, char::len_utf8),
            }
        }
        if chunk_start < text.len() {
            atoms.push(Atom::Text(text[chunk_start..].to_string()));
        }
        Self::new(atoms)
    }
}

/// Row-major flat indices of `tokens` wrapped in the delimiters of `mode`.
pub fn frame_image(tokens: &TokenGrid, mode: FrameMode) -> VocabFrame {
    let (open, close) = mode.delimiters();
    let mut atoms = Vec::with_capacity(tokens.len() + 2);
    atoms.push(open);
    atoms.extend(tokens.flat_idx().iter().map(|&h| Atom::Img(h)));
    atoms.push(close);
    VocabFrame { atoms }
}

/// Recovers the `height × width` token grid from a frame holding exactly one
/// delimiter pair. Text atoms outside the pair are ignored.
pub fn parse_frame(frame: &VocabFrame, height: usize, width: usize, m: u32) -> Result<TokenGrid> {
    let atoms = frame.atoms();
    let opens: Vec<usize> = (0..atoms.len()).filter(|&i| atoms[i].opens().is_some()).collect();
    let [start] = opens[..] else {
        return Err(Error::Frame(format!(
            "expected one delimited image segment, found {}",
            opens.len()
        )));
    };
    let end = (start..atoms.len())
        .find(|&i| atoms[i].is_close())
        .ok_or_else(|| Error::Frame("missing closing delimiter".into()))?;
    let mut flat = Vec::with_capacity(end - start - 1);
    for atom in &atoms[start + 1..end] {
        match atom {
            Atom::Img(h) => flat.push(*h),
            other => return Err(Error::Frame(format!("unexpected {other} inside image segment"))),
        }
    }
    if flat.len() != height * width {
        return Err(Error::Frame(format!(
            "image segment holds {} tokens, expected {height}x{width} = {}",
            flat.len(),
            height * width
        )));
    }
    TokenGrid::from_flat(height, width, m, flat)
}

/// `(K·m) × (d_sem + d_pix)` matrix whose row `h` concatenates semantic code `h / m`
/// with row `h % m` of its pixel sub-codebook. The two column blocks stay separable.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    rows: usize,
    dim_sem: usize,
    dim_pix: usize,
    data: Vec<f32>,
}

impl EmbeddingTable {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim_sem + self.dim_pix
    }

    pub fn dim_sem(&self) -> usize {
        self.dim_sem
    }

    pub fn dim_pix(&self) -> usize {
        self.dim_pix
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, h: usize) -> &[f32] {
        &self.data[h * self.dim()..(h + 1) * self.dim()]
    }

    pub fn semantic_block(&self, h: usize) -> &[f32] {
        &self.row(h)[..self.dim_sem]
    }

    pub fn pixel_block(&self, h: usize) -> &[f32] {
        &self.row(h)[self.dim_sem..]
    }
}

pub fn export_embedding_table(hier: &HierarchicalCodebook) -> EmbeddingTable {
    let (k, m) = (hier.k(), hier.m());
    let mut data = Vec::with_capacity(k * m * (hier.dim_sem() + hier.dim_pix()));
    for i in 0..k {
        let sem = hier.semantic().row(i);
        let sub = hier.sub(i);
        for j in 0..m {
            data.extend_from_slice(sem);
            data.extend_from_slice(sub.row(j));
        }
    }
    EmbeddingTable {
        rows: k * m,
        dim_sem: hier.dim_sem(),
        dim_pix: hier.dim_pix(),
        data,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayoutKind {
    /// `IM_START, IM_END, START_IMG, END_IMG` at `V..V+3`, image codes from `V+4`.
    Unified,
    /// `START_IMG, END_IMG` at `V, V+1`, image codes from `V+2`. No understanding delimiters.
    GenerationOnly,
}

/// Placement of special and image tokens after a text vocabulary of size `V`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IdLayout {
    text_vocab: u32,
    image_vocab: u32,
    kind: LayoutKind,
}

impl IdLayout {
    pub fn new(text_vocab: u32, image_vocab: u32, kind: LayoutKind) -> Result<Self> {
        let specials = match kind {
            LayoutKind::Unified => 4,
            LayoutKind::GenerationOnly => 2,
        };
        if (text_vocab as u64) + specials + image_vocab as u64 > u32::MAX as u64 + 1 {
            return Err(Error::Config(format!(
                "text vocabulary {text_vocab} plus {image_vocab} image tokens overflows 32-bit ids"
            )));
        }
        Ok(Self {
            text_vocab,
            image_vocab,
            kind,
        })
    }

    pub fn unified(text_vocab: u32, image_vocab: u32) -> Result<Self> {
        Self::new(text_vocab, image_vocab, LayoutKind::Unified)
    }

    pub fn generation_only(text_vocab: u32, image_vocab: u32) -> Result<Self> {
        Self::new(text_vocab, image_vocab, LayoutKind::GenerationOnly)
    }

    pub fn text_vocab(&self) -> u32 {
        self.text_vocab
    }

    pub fn image_vocab(&self) -> u32 {
        self.image_vocab
    }

    pub fn kind(&self) -> LayoutKind {
        self.kind
    }

    fn specials(&self) -> &'static [Atom] {
        match self.kind {
            LayoutKind::Unified => &[Atom::ImStart, Atom::ImEnd, Atom::StartImg, Atom::EndImg],
            LayoutKind::GenerationOnly => &[Atom::StartImg, Atom::EndImg],
        }
    }

    /// First image-token id.
    pub fn image_base(&self) -> u32 {
        self.text_vocab + self.specials().len() as u32
    }

    /// Total id space: text, specials and image tokens.
    pub fn total(&self) -> u64 {
        self.image_base() as u64 + self.image_vocab as u64
    }

    pub fn atom_id(&self, atom: &Atom) -> Result<u32> {
        match atom {
            Atom::Img(h) => {
                check_range(*h, self.image_vocab)?;
                Ok(self.image_base() + h)
            }
            Atom::Text(t) => Err(Error::Frame(format!(
                "text chunk {t:?} has no id without a text tokenizer"
            ))),
            special => self
                .specials()
                .iter()
                .position(|s| s == special)
                .map(|p| self.text_vocab + p as u32)
                .ok_or_else(|| Error::Config(format!("{special} has no id in this layout"))),
        }
    }

    /// Non-text atom for an id at or above `V`.
    pub fn id_atom(&self, id: u32) -> Result<Atom> {
        if id < self.text_vocab || id as u64 >= self.total() {
            return Err(Error::Range(format!("id {id} is not a special or image id")));
        }
        let offset = (id - self.text_vocab) as usize;
        Ok(match self.specials().get(offset) {
            Some(a) => a.clone(),
            None => Atom::Img(id - self.image_base()),
        })
    }
}

/// Unified id sequence plus a per-position flag marking image-token ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AssembledStream {
    pub ids: Vec<u32>,
    pub image_mask: Vec<bool>,
}

/// Text ids followed by each frame, image code `h` mapped to `image_base + h`.
pub fn assemble_stream(text_ids: &[u32], frames: &[VocabFrame], layout: &IdLayout) -> Result<AssembledStream> {
    if let Some(&bad) = text_ids.iter().find(|&&t| t >= layout.text_vocab) {
        return Err(Error::Config(format!(
            "text id {bad} collides with the image id range starting at {}",
            layout.text_vocab
        )));
    }
    let mut ids = text_ids.to_vec();
    let mut image_mask = vec![false; text_ids.len()];
    for frame in frames {
        for atom in frame.atoms() {
            ids.push(layout.atom_id(atom)?);
            image_mask.push(matches!(atom, Atom::Img(_)));
        }
    }
    Ok(AssembledStream { ids, image_mask })
}

/// Inverse of [`assemble_stream`]: the leading text ids and the frames after them.
pub fn split_stream(ids: &[u32], layout: &IdLayout) -> Result<(Vec<u32>, Vec<VocabFrame>)> {
    let text_len = ids.iter().position(|&id| id >= layout.text_vocab).unwrap_or(ids.len());
    let mut frames = Vec::new();
    let mut current: Vec<Atom> = Vec::new();
    for &id in &ids[text_len..] {
        if id < layout.text_vocab {
            return Err(Error::Frame(format!("text id {id} follows an image segment")));
        }
        let atom = layout.id_atom(id)?;
        let closes = atom.is_close();
        if current.is_empty() && atom.opens().is_none() {
            return Err(Error::Frame(format!("{atom} outside any delimiter pair")));
        }
        current.push(atom);
        if closes {
            frames.push(VocabFrame::new(std::mem::take(&mut current))?);
        }
    }
    if !current.is_empty() {
        return Err(Error::Frame("stream ends inside an image segment".into()));
    }
    Ok((ids[..text_len].to_vec(), frames))
}

/// Framed ids of a single image with `V = 0`, as stored in token files.
pub fn image_ids(tokens: &TokenGrid, mode: FrameMode, vocab_size: u32) -> Result<Vec<u32>> {
    let layout = IdLayout::unified(0, vocab_size)?;
    Ok(assemble_stream(&[], &[frame_image(tokens, mode)], &layout)?.ids)
}

/// Inverse of [`image_ids`].
pub fn tokens_from_ids(ids: &[u32], height: usize, width: usize, m: u32, vocab_size: u32) -> Result<TokenGrid> {
    let layout = IdLayout::unified(0, vocab_size)?;
    let (_, frames) = split_stream(ids, &layout)?;
    match &frames[..] {
        [frame] => parse_frame(frame, height, width, m),
        _ => Err(Error::Frame(format!(
            "expected one image segment, found {}",
            frames.len()
        ))),
    }
}
