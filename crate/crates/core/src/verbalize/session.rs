use super::vocab::PAD;
use super::VerbalizeError;

/// A token sequence cut into `n` contiguous rows of exactly `m` tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionBatch {
    sessions: Vec<Vec<u32>>,
    attention_mask: Vec<Vec<bool>>,
}

impl SessionBatch {
    /// Build from explicit rows; all rows must share one length. PAD ids
    /// are the masked positions.
    pub fn from_rows(sessions: Vec<Vec<u32>>) -> Result<Self, VerbalizeError> {
        let m = sessions.first().map_or(0, Vec::len);
        if m == 0 || sessions.iter().any(|s| s.len() != m) {
            return Err(VerbalizeError::InvalidGeometry { n: sessions.len(), m });
        }
        let attention_mask = sessions.iter().map(|s| s.iter().map(|&t| t != PAD).collect()).collect();
        Ok(SessionBatch { sessions, attention_mask })
    }

    pub fn num_sessions(&self) -> usize {
        self.sessions.len()
    }

    pub fn session_len(&self) -> usize {
        self.sessions[0].len()
    }

    pub fn sessions(&self) -> &[Vec<u32>] {
        &self.sessions
    }

    pub fn attention_mask(&self) -> &[Vec<bool>] {
        &self.attention_mask
    }

    /// Real (non-PAD) tokens in session order.
    pub fn real_tokens(&self) -> Vec<u32> {
        self.sessions
            .iter()
            .zip(&self.attention_mask)
            .flat_map(|(s, m)| s.iter().zip(m).filter(|(_, &k)| k).map(|(&t, _)| t))
            .collect()
    }

    pub fn has_real_token(&self) -> bool {
        self.attention_mask.iter().flatten().any(|&k| k)
    }
}

/// Chunk `tokens` into `n` rows of `m`, PAD-filling the tail and dropping
/// anything past `n·m`.
pub fn split_sessions(tokens: &[u32], n: usize, m: usize) -> Result<SessionBatch, VerbalizeError> {
    if n == 0 || m == 0 {
        return Err(VerbalizeError::InvalidGeometry { n, m });
    }
    let kept = &tokens[..tokens.len().min(n * m)];
    let mut sessions = Vec::with_capacity(n);
    let mut attention_mask = Vec::with_capacity(n);
    for i in 0..n {
        let start = (i * m).min(kept.len());
        let end = ((i + 1) * m).min(kept.len());
        let mut row = kept[start..end].to_vec();
        let mut mask = vec![true; row.len()];
        row.resize(m, PAD);
        mask.resize(m, false);
        sessions.push(row);
        attention_mask.push(mask);
    }
    Ok(SessionBatch { sessions, attention_mask })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn full_and_partial_sessions() {
        let tokens: Vec<u32> = (3..515).collect();
        let b = split_sessions(&tokens, 2, 256).unwrap();
        assert!(b.attention_mask().iter().flatten().all(|&k| k));

        let b = split_sessions(&tokens[..300], 2, 256).unwrap();
        let real: Vec<usize> = b.attention_mask().iter().map(|m| m.iter().filter(|&&k| k).count()).collect();
        assert_eq!(real, [256, 44]);
        assert!(b.sessions()[1][44..].iter().all(|&t| t == PAD));
    }

    #[test]
    fn single_session_is_truncation() {
        let tokens: Vec<u32> = (3..20).collect();
        let b = split_sessions(&tokens, 1, 8).unwrap();
        assert_eq!(b.sessions(), &[tokens[..8].to_vec()]);
        assert!(split_sessions(&tokens, 0, 8).is_err());
        assert!(split_sessions(&tokens, 1, 0).is_err());
    }

    proptest! {
        #[test]
        fn real_tokens_are_prefix(len in 0usize..80, n in 1usize..5, m in 1usize..20) {
            let tokens: Vec<u32> = (0..len as u32).map(|t| t + 3).collect();
            let b = split_sessions(&tokens, n, m).unwrap();
            prop_assert_eq!(b.num_sessions(), n);
            prop_assert!(b.sessions().iter().all(|s| s.len() == m));
            prop_assert_eq!(b.real_tokens(), tokens[..len.min(n * m)].to_vec());
            for (s, mask) in b.sessions().iter().zip(b.attention_mask()) {
                for (&t, &k) in s.iter().zip(mask) {
                    prop_assert_eq!(k, t != PAD);
                }
            }
        }
    }
}
