//! Downloading and unpacking upstream archives.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;
use std::time::Duration;

use md5::{Digest, Md5};
use sha2::Sha256;

use crate::error::{Error, Result};

/// One remote file with its published MD5.
#[derive(Debug, Clone, Copy)]
pub struct RemoteFile {
    pub url: &'static str,
    pub md5: &'static str,
    /// Unpack as a gzip tarball into `raw/`.
    pub untar: bool,
}

impl RemoteFile {
    pub fn file_name(&self) -> &'static str {
        self.url.rsplit('/').next().unwrap_or(self.url)
    }
}

fn hash_file<D: Digest>(path: &Path) -> Result<String> {
    let mut f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut h = D::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    hash_file::<Sha256>(path)
}

pub fn md5_file(path: &Path) -> Result<String> {
    hash_file::<Md5>(path)
}

/// Streams `remote` into `dest`, verifying its MD5.
pub fn download(remote: &RemoteFile, dest: &Path) -> Result<()> {
    let fail = |reason: String| Error::DownloadFailure {
        url: remote.url.to_string(),
        reason,
    };
    log::info!("downloading {}", remote.url);
    let agent = ureq::AgentBuilder::new()
        .timeout_connect(Duration::from_secs(30))
        .timeout_read(Duration::from_secs(120))
        .build();
    let resp = agent.get(remote.url).call().map_err(|e| fail(e.to_string()))?;
    let tmp = dest.with_extension("part");
    {
        let file = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        let mut w = BufWriter::new(file);
        let mut reader = resp.into_reader();
        std::io::copy(&mut reader, &mut w).map_err(|e| fail(e.to_string()))?;
        w.flush().map_err(|e| Error::io(&tmp, e))?;
    }
    let found = md5_file(&tmp)?;
    if found != remote.md5 {
        let _ = std::fs::remove_file(&tmp);
        return Err(Error::DigestMismatch {
            path: dest.to_path_buf(),
            expected: remote.md5.to_string(),
            found,
        });
    }
    std::fs::rename(&tmp, dest).map_err(|e| Error::io(dest, e))
}

pub fn untar_gz(archive: &Path, into: &Path) -> Result<()> {
    let f = File::open(archive).map_err(|e| Error::io(archive, e))?;
    tar::Archive::new(flate2::read::GzDecoder::new(f))
        .unpack(into)
        .map_err(|e| Error::io(archive, e))
}
