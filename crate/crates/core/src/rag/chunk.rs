use std::ops::Range;

use super::RagError;

/// Character spans covering `text` in windows of `size` chars that overlap by
/// `overlap`. Spans are half-open and count Unicode scalar values.
pub fn chunk_spans(char_len: usize, size: usize, overlap: usize) -> Result<Vec<Range<usize>>, RagError> {
    if size <= overlap {
        return Err(RagError::BadParams { size, overlap });
    }
    if char_len == 0 {
        return Err(RagError::EmptyText);
    }
    let step = size - overlap;
    let mut spans = Vec::new();
    let mut start = 0;
    loop {
        let end = (start + size).min(char_len);
        spans.push(start..end);
        if end == char_len {
            return Ok(spans);
        }
        start += step;
    }
}

/// Splits `text` into `(span, chunk_text)` pairs.
pub fn chunk_text(text: &str, size: usize, overlap: usize) -> Result<Vec<(Range<usize>, String)>, RagError> {
    // byte offset of every char boundary, plus the end
    let bounds: Vec<usize> = text.char_indices().map(|(i, _)| i).chain([text.len()]).collect();
    let spans = chunk_spans(bounds.len() - 1, size, overlap)?;
    Ok(spans
        .into_iter()
        .map(|s| {
            let piece = text[bounds[s.start]..bounds[s.end]].to_string();
            (s, piece)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_sizes_on_3500_chars() {
        let spans = chunk_spans(3500, 1600, 200).unwrap();
        assert_eq!(spans, vec![0..1600, 1400..3000, 2800..3500]);
    }

    #[test]
    fn short_text_is_one_chunk() {
        assert_eq!(chunk_spans(100, 1600, 200).unwrap(), vec![0..100]);
    }

    #[test]
    fn overlap_must_be_smaller_than_size() {
        assert_eq!(
            chunk_spans(10, 200, 200),
            Err(RagError::BadParams {
                size: 200,
                overlap: 200
            })
        );
        assert_eq!(chunk_spans(0, 10, 2), Err(RagError::EmptyText));
    }

    #[test]
    fn exact_multiple_does_not_emit_empty_tail() {
        assert_eq!(chunk_spans(10, 4, 0).unwrap(), vec![0..4, 4..8, 8..10]);
        assert_eq!(chunk_spans(8, 4, 0).unwrap(), vec![0..4, 4..8]);
        assert_eq!(chunk_spans(4, 4, 1).unwrap(), vec![0..4]);
    }

    #[test]
    fn multibyte_text_is_cut_on_char_boundaries() {
        let text = "héllo wörld ✓✓";
        let chunks = chunk_text(text, 5, 2).unwrap();
        assert_eq!(chunks[0].1, "héllo");
        assert_eq!(chunks[1].1, "lo wö");
        assert_eq!(chunks.last().unwrap().0.end, text.chars().count());
    }
}
