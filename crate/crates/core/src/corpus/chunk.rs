use super::CorpusError;

/// A window of a tokenized document.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Chunk {
    pub doc_id: String,
    pub start_offset: usize,
    pub token_ids: Vec<u32>,
}

impl Chunk {
    pub fn end_offset(&self) -> usize {
        self.start_offset + self.token_ids.len()
    }

    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }
}

/// Cuts `tokens` into windows of at most `max_len` that advance by
/// `max_len - stride`, so adjacent windows share exactly `stride` tokens.
pub fn chunk(doc_id: &str, tokens: &[u32], max_len: usize, stride: usize) -> Result<Vec<Chunk>, CorpusError> {
    if max_len == 0 || stride >= max_len {
        return Err(CorpusError::InvalidStride { max_len, stride });
    }
    let step = max_len - stride;
    let mut chunks = Vec::new();
    let mut start = 0;
    while start < tokens.len() {
        let end = (start + max_len).min(tokens.len());
        chunks.push(Chunk {
            doc_id: doc_id.to_string(),
            start_offset: start,
            token_ids: tokens[start..end].to_vec(),
        });
        if end == tokens.len() {
            break;
        }
        start += step;
    }
    Ok(chunks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn seq(n: usize) -> Vec<u32> {
        (0..n as u32).collect()
    }

    #[test]
    fn short_document_is_one_chunk() {
        let c = chunk("d", &seq(100), 512, 384).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].len(), 100);
    }

    #[test]
    fn window_arithmetic_for_600_tokens() {
        // step = 512 - 384 = 128: windows [0, 512) and [128, 600)
        let c = chunk("d", &seq(600), 512, 384).unwrap();
        let starts: Vec<_> = c.iter().map(|c| c.start_offset).collect();
        assert_eq!(starts, vec![0, 128]);
        assert_eq!(c[1].end_offset(), 600);
    }

    #[test]
    fn exact_fit_is_one_chunk() {
        assert_eq!(chunk("d", &seq(512), 512, 384).unwrap().len(), 1);
    }

    #[test]
    fn stride_must_be_below_max_len() {
        assert!(chunk("d", &seq(10), 8, 8).is_err());
        assert!(chunk("d", &seq(10), 0, 0).is_err());
        assert!(chunk("d", &seq(10), 8, 7).is_ok());
    }

    #[test]
    fn empty_document_has_no_chunks() {
        assert!(chunk("d", &[], 8, 2).unwrap().is_empty());
    }

    proptest! {
        #[test]
        fn overlap_and_reconstruction(n in 0usize..400, max_len in 1usize..64, stride_frac in 0.0f64..1.0) {
            let stride = ((max_len as f64) * stride_frac) as usize;
            let stride = stride.min(max_len - 1);
            let tokens = seq(n);
            let chunks = chunk("d", &tokens, max_len, stride).unwrap();
            for c in &chunks {
                prop_assert!(c.len() <= max_len);
            }
            for pair in chunks.windows(2) {
                let (a, b) = (&pair[0], &pair[1]);
                prop_assert_eq!(&a.token_ids[a.len() - stride..], &b.token_ids[..stride]);
            }
            let mut rebuilt: Vec<u32> = Vec::new();
            for (i, c) in chunks.iter().enumerate() {
                let skip = if i == 0 { 0 } else { stride };
                rebuilt.extend(&c.token_ids[skip..]);
            }
            prop_assert_eq!(rebuilt, tokens);
        }
    }
}
