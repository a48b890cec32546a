//! Newline-delimited JSON protocol for detectors running as external
//! processes.
//!
//! Request, one line:
//! `{"request_id": 1, "batch": [{"tile_id": "...", "png_path": "...", "width": 640, "height": 540}]}`
//!
//! Response, one line:
//! `{"request_id": 1, "results": [{"tile_id": "...", "detections": [{"bbox": [x0, y0, x1, y1], "category_id": 0, "score": 0.9}]}]}`
//!
//! Responses may come back out of order but must echo the request id. Boxes
//! are tile-local pixels of the PNG that was sent.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, Command, Stdio};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{
    finalize_tile_detections, DetectRequest, DetectResponse, Detector, Region, TileDetections, TileImage,
    DEFAULT_MAX_DETS_PER_TILE,
};
use crate::error::{Error, Result};
use crate::geometry::{BBox, Detection, TileId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireTile {
    pub tile_id: String,
    pub png_path: String,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireRequest {
    pub request_id: u64,
    pub batch: Vec<WireTile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireDetection {
    pub bbox: [f64; 4],
    pub category_id: u32,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireTileResult {
    pub tile_id: String,
    pub detections: Vec<WireDetection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireResponse {
    pub request_id: u64,
    pub results: Vec<WireTileResult>,
}

/// Client side of the protocol.
pub struct StdioDetector {
    reader: Box<dyn BufRead + Send>,
    writer: Option<Box<dyn Write + Send>>,
    child: Option<Child>,
    next_request: u64,
    scratch: tempfile::TempDir,
    stashed: HashMap<u64, WireResponse>,
}

impl StdioDetector {
    /// Launch `program args...` and talk to it over its stdin/stdout.
    pub fn spawn(program: &str, args: &[String]) -> Result<Self> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::backend(format!("cannot start detector process `{program}`: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let mut d = Self::from_streams(Box::new(BufReader::new(stdout)), Box::new(stdin))?;
        d.child = Some(child);
        Ok(d)
    }

    pub fn from_streams(reader: Box<dyn BufRead + Send>, writer: Box<dyn Write + Send>) -> Result<Self> {
        let scratch = tempfile::Builder::new()
            .prefix("dyntile-tiles-")
            .tempdir()
            .map_err(|e| Error::io(std::env::temp_dir(), e))?;
        Ok(Self {
            reader,
            writer: Some(writer),
            child: None,
            next_request: 1,
            scratch,
            stashed: HashMap::new(),
        })
    }

    fn read_response(&mut self, request_id: u64) -> Result<WireResponse> {
        if let Some(r) = self.stashed.remove(&request_id) {
            return Ok(r);
        }
        let mut line = String::new();
        loop {
            line.clear();
            let n = self
                .reader
                .read_line(&mut line)
                .map_err(|e| Error::protocol(format!("reading detector output: {e}")))?;
            if n == 0 {
                return Err(Error::protocol("detector closed its output stream"));
            }
            if line.trim().is_empty() {
                continue;
            }
            let resp: WireResponse = serde_json::from_str(line.trim_end())
                .map_err(|e| Error::protocol(format!("malformed response line: {e}")))?;
            if resp.request_id == request_id {
                return Ok(resp);
            }
            self.stashed.insert(resp.request_id, resp);
        }
    }
}

fn to_detection(w: &WireDetection, tile: &TileId) -> Result<Detection> {
    let [x0, y0, x1, y1] = w.bbox;
    let bbox = BBox::new(x0, y0, x1, y1)
        .map_err(|e| Error::protocol(format!("bad bbox for tile {tile}: {e}")))?;
    if !w.score.is_finite() {
        return Err(Error::protocol(format!("non-finite score for tile {tile}")));
    }
    Ok(Detection::new(bbox, w.category_id, w.score, tile.clone()))
}

impl Detector for StdioDetector {
    fn detect(&mut self, request: &DetectRequest) -> Result<DetectResponse> {
        request.validate()?;
        let request_id = self.next_request;
        self.next_request += 1;

        let mut batch = Vec::with_capacity(request.len());
        let mut paths = Vec::with_capacity(request.len());
        for (k, t) in request.batch.iter().enumerate() {
            let img = t
                .pixels
                .as_ref()
                .ok_or_else(|| Error::contract(format!("tile {} sent to stdio detector without pixels", t.id)))?;
            let path = self.scratch.path().join(format!("r{request_id}_t{k}.png"));
            img.save(&path)?;
            batch.push(WireTile {
                tile_id: t.id.0.clone(),
                png_path: path.to_string_lossy().into_owned(),
                width: img.width(),
                height: img.height(),
            });
            paths.push(path);
        }
        let mut line = serde_json::to_string(&WireRequest { request_id, batch })?;
        line.push('\n');
        let writer = self
            .writer
            .as_mut()
            .ok_or_else(|| Error::backend("detector input already closed"))?;
        writer
            .write_all(line.as_bytes())
            .and_then(|_| writer.flush())
            .map_err(|e| Error::backend(format!("writing to detector: {e}")))?;

        let resp = self.read_response(request_id);
        for p in paths {
            let _ = std::fs::remove_file(p);
        }
        let resp = resp?;

        let mut by_id: HashMap<&str, &TileImage> = request.batch.iter().map(|t| (t.id.as_str(), t)).collect();
        let mut results = Vec::with_capacity(request.len());
        for r in &resp.results {
            let tile = by_id
                .remove(r.tile_id.as_str())
                .ok_or_else(|| Error::protocol(format!("response names unknown or repeated tile {}", r.tile_id)))?;
            let dets = r
                .detections
                .iter()
                .map(|d| to_detection(d, &tile.id))
                .collect::<Result<Vec<_>>>()?;
            results.push(TileDetections {
                tile_id: tile.id.clone(),
                detections: finalize_tile_detections(dets, tile.width(), tile.height(), DEFAULT_MAX_DETS_PER_TILE),
            });
        }
        // tiles the worker left out get empty results
        for t in &request.batch {
            if by_id.contains_key(t.id.as_str()) {
                results.push(TileDetections {
                    tile_id: t.id.clone(),
                    detections: Vec::new(),
                });
            }
        }
        Ok(DetectResponse { results })
    }

    fn needs_pixels(&self) -> bool {
        true
    }
}

impl Drop for StdioDetector {
    fn drop(&mut self) {
        // closing stdin tells the worker to exit
        self.writer.take();
        if let Some(mut child) = self.child.take() {
            let deadline = Instant::now() + Duration::from_secs(2);
            while Instant::now() < deadline {
                if let Ok(Some(_)) = child.try_wait() {
                    return;
                }
                std::thread::sleep(Duration::from_millis(10));
            }
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

/// Server side: answer requests from `input` with `detector` until EOF.
pub fn serve_stdio<R: BufRead, W: Write>(input: R, mut output: W, detector: &mut dyn Detector) -> Result<()> {
    for line in input.lines() {
        let line = line.map_err(|e| Error::protocol(format!("reading request: {e}")))?;
        if line.trim().is_empty() {
            continue;
        }
        let req: WireRequest =
            serde_json::from_str(&line).map_err(|e| Error::protocol(format!("malformed request line: {e}")))?;
        let mut batch = Vec::with_capacity(req.batch.len());
        for t in &req.batch {
            let img = image::open(&t.png_path)?.to_rgb8();
            if img.dimensions() != (t.width, t.height) {
                return Err(Error::protocol(format!(
                    "tile {} declared {}x{} but image is {}x{}",
                    t.tile_id,
                    t.width,
                    t.height,
                    img.width(),
                    img.height()
                )));
            }
            batch.push(TileImage {
                id: TileId(t.tile_id.clone()),
                region: Region::Crop(BBox {
                    x_min: 0.0,
                    y_min: 0.0,
                    x_max: t.width as f64,
                    y_max: t.height as f64,
                }),
                hflip: false,
                pixels: Some(img),
            });
        }
        let resp = detector.detect(&DetectRequest::new(batch))?;
        let wire = WireResponse {
            request_id: req.request_id,
            results: resp
                .results
                .iter()
                .map(|r| WireTileResult {
                    tile_id: r.tile_id.0.clone(),
                    detections: r
                        .detections
                        .iter()
                        .map(|d| WireDetection {
                            bbox: [d.bbox.x_min, d.bbox.y_min, d.bbox.x_max, d.bbox.y_max],
                            category_id: d.category_id,
                            score: d.score,
                        })
                        .collect(),
                })
                .collect(),
        };
        let mut text = serde_json::to_string(&wire)?;
        text.push('\n');
        output
            .write_all(text.as_bytes())
            .and_then(|_| output.flush())
            .map_err(|e| Error::protocol(format!("writing response: {e}")))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use std::io::Cursor;
    use std::thread;

    use image::{Rgb, RgbImage};

    use super::*;
    use crate::detector::ColorBlobDetector;
    use crate::scene::category_color;

    fn tile_with_square(id: &str) -> TileImage {
        let mut img = RgbImage::from_pixel(64, 48, Rgb([128, 128, 128]));
        for y in 10..20 {
            for x in 30..50 {
                img.put_pixel(x, y, category_color(2));
            }
        }
        TileImage {
            id: TileId::new(id),
            region: Region::Crop(BBox::new(0.0, 0.0, 64.0, 48.0).unwrap()),
            hflip: false,
            pixels: Some(img),
        }
    }

    fn connected_pair() -> (StdioDetector, thread::JoinHandle<Result<()>>) {
        let (req_r, req_w) = std::io::pipe().unwrap();
        let (resp_r, resp_w) = std::io::pipe().unwrap();
        let server = thread::spawn(move || {
            let mut blob = ColorBlobDetector::new(5, 4);
            serve_stdio(BufReader::new(req_r), resp_w, &mut blob)
        });
        let client = StdioDetector::from_streams(Box::new(BufReader::new(resp_r)), Box::new(req_w)).unwrap();
        (client, server)
    }

    #[test]
    fn round_trip_through_pipes() {
        let (mut client, server) = connected_pair();
        let req = DetectRequest::new(vec![tile_with_square("a"), tile_with_square("b")]);
        for _ in 0..2 {
            let resp = client.detect(&req).unwrap();
            for id in ["a", "b"] {
                let d = resp.get(&TileId::new(id)).unwrap();
                assert_eq!(d.len(), 1);
                assert_eq!(d[0].bbox, BBox::new(30.0, 10.0, 50.0, 20.0).unwrap());
                assert_eq!(d[0].category_id, 2);
            }
        }
        drop(client);
        server.join().unwrap().unwrap();
    }

    #[test]
    fn out_of_order_responses_are_matched_by_id() {
        let lines = concat!(
            r#"{"request_id": 9, "results": []}"#,
            "\n",
            r#"{"request_id": 1, "results": [{"tile_id": "a", "detections": [{"bbox": [1, 2, 3, 4], "category_id": 0, "score": 0.5}]}]}"#,
            "\n"
        );
        let mut client = StdioDetector::from_streams(Box::new(Cursor::new(lines.as_bytes().to_vec())), Box::new(Vec::new())).unwrap();
        let resp = client.detect(&DetectRequest::new(vec![tile_with_square("a")])).unwrap();
        assert_eq!(resp.get(&TileId::new("a")).unwrap()[0].bbox, BBox::new(1.0, 2.0, 3.0, 4.0).unwrap());
        assert!(client.stashed.contains_key(&9));
    }

    #[test]
    fn malformed_line_is_protocol_error() {
        let mut client =
            StdioDetector::from_streams(Box::new(Cursor::new(b"not json\n".to_vec())), Box::new(Vec::new())).unwrap();
        let err = client.detect(&DetectRequest::new(vec![tile_with_square("a")])).unwrap_err();
        assert!(matches!(err, Error::Protocol(_)), "{err}");
    }

    #[test]
    fn unknown_tile_is_protocol_error() {
        let line = r#"{"request_id": 1, "results": [{"tile_id": "zz", "detections": []}]}"#.to_string() + "\n";
        let mut client =
            StdioDetector::from_streams(Box::new(Cursor::new(line.into_bytes())), Box::new(Vec::new())).unwrap();
        let err = client.detect(&DetectRequest::new(vec![tile_with_square("a")])).unwrap_err();
        assert!(matches!(err, Error::Protocol(_)));
    }

    #[test]
    fn closed_stream_is_protocol_error() {
        let mut client = StdioDetector::from_streams(Box::new(Cursor::new(Vec::new())), Box::new(Vec::new())).unwrap();
        assert!(matches!(
            client.detect(&DetectRequest::new(vec![tile_with_square("a")])),
            Err(Error::Protocol(_))
        ));
    }

    #[test]
    fn missing_executable_is_backend_error() {
        let err = StdioDetector::spawn("/nonexistent/detector-binary", &[]).err().unwrap();
        assert!(matches!(err, Error::Backend(_)));
    }

    #[test]
    fn request_line_shape() {
        let req = WireRequest {
            request_id: 3,
            batch: vec![WireTile {
                tile_id: "i/base/r0c0".into(),
                png_path: "/tmp/x.png".into(),
                width: 640,
                height: 540,
            }],
        };
        assert_eq!(
            serde_json::to_string(&req).unwrap(),
            r#"{"request_id":3,"batch":[{"tile_id":"i/base/r0c0","png_path":"/tmp/x.png","width":640,"height":540}]}"#
        );
    }
}
