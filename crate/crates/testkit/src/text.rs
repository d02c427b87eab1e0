//! Random text and chunk reassembly.

use rand::Rng;

const PIECES: &[&str] = &[
    "a", "b", "z", " ", " ", "\n", "\t", "é", "ß", "ж", "中", "文", "🙂", "🧠", "\u{301}", ".", "-",
];

/// `chars` Unicode scalar values mixing ASCII, whitespace, multibyte letters,
/// emoji and combining marks.
pub fn random_text(rng: &mut impl Rng, chars: usize) -> String {
    (0..chars).map(|_| PIECES[rng.gen_range(0..PIECES.len())]).collect()
}

/// Concatenates overlapping chunks, dropping the first `overlap` chars of
/// every chunk after the first.
pub fn reassemble<S: AsRef<str>>(chunks: &[S], overlap: usize) -> String {
    let mut out = String::new();
    for (i, c) in chunks.iter().enumerate() {
        let c = c.as_ref();
        if i == 0 {
            out.push_str(c);
        } else {
            out.extend(c.chars().skip(overlap));
        }
    }
    out
}

/// Windows of `size` chars starting every `size - overlap` chars, the last
/// one ending at the end of the text.
pub fn windows(text: &str, size: usize, overlap: usize) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut start = 0;
    loop {
        let end = (start + size).min(chars.len());
        out.push(chars[start..end].iter().collect());
        if end == chars.len() {
            return out;
        }
        start += size - overlap;
    }
}
