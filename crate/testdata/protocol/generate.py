"""Regenerates the protocol test vectors from the documented byte layout.

Written without reference to the Rust encoder so the vectors check it.
Run from this directory: python3 generate.py
"""
import io
import json
import struct

from PIL import Image


def compact(obj):
    return json.dumps(obj, separators=(",", ":"), ensure_ascii=False).encode()


def wire_frame(header, payload):
    h = compact(header)
    return b"LGF1" + struct.pack(">I", len(h)) + h + payload


def infer_request(request_id, upstream, frame_bytes):
    u = b"" if upstream is None else compact(upstream)
    return struct.pack(">II", request_id, len(u)) + u + frame_bytes


def header(seq, t_capture_ns, t_wall_ns, width, height, fmt):
    # Key order is part of the contract.
    return {
        "seq": seq,
        "t_capture_ns": t_capture_ns,
        "t_wall_ns": t_wall_ns,
        "width": width,
        "height": height,
        "pixel_format": fmt,
    }


def tiny_jpeg():
    img = Image.new("L", (8, 8))
    img.putdata([(x * 32 + y * 4) % 256 for y in range(8) for x in range(8)])
    buf = io.BytesIO()
    img.save(buf, format="JPEG", quality=90)
    return buf.getvalue()


vectors = []


def frame_vector(name, hdr, payload):
    data = wire_frame(hdr, payload)
    with open(f"{name}.bin", "wb") as f:
        f.write(data)
    vectors.append({"name": name, "file": f"{name}.bin", "kind": "frame",
                    "header": hdr, "payload_hex": payload.hex()})
    return data


def error_vector(name, kind, data, error):
    with open(f"{name}.bin", "wb") as f:
        f.write(data)
    vectors.append({"name": name, "file": f"{name}.bin", "kind": kind, "error": error})


def text_vector(name, kind, obj):
    with open(f"{name}.json", "wb") as f:
        f.write(compact(obj))
    vectors.append({"name": name, "file": f"{name}.json", "kind": kind})


gray = frame_vector("frame_gray8_4x2",
                    header(7, 1_000_000_000, 1_700_000_000_000_000_000, 4, 2, "GRAY8"),
                    bytes(range(8)))
frame_vector("frame_rgb8_2x1", header(0, 5, 6, 2, 1, "RGB8"), bytes([255, 0, 0, 0, 255, 0]))
frame_vector("frame_jpeg_8x8", header(1, 10, 20, 8, 8, "JPEG"), tiny_jpeg())

upstream = {
    "result_version": 1,
    "frame_seq": 7,
    "engine": "seg",
    "status": "ok",
    "verdict": "near_standard_plane",
    "plane": "abdomen",
    "concepts": [
        {"name": "stomach_bubble", "present": True, "score": 0.97},
        {"name": "umbilical_vein", "present": False, "score": 0.12},
    ],
    "t_capture_ns": 1_000_000_000,
    "t_submit_ns": 1_000_500_000,
    "t_result_ns": 1_012_500_000,
    "engine_ms": 12.5,
    "upstream_seen": False,
}

for name, rid, up in [("request_no_upstream", 42, None), ("request_with_upstream", 43, upstream)]:
    with open(f"{name}.bin", "wb") as f:
        f.write(infer_request(rid, up, gray))
    vectors.append({"name": name, "file": f"{name}.bin", "kind": "infer_request",
                    "request_id": rid, "upstream": up, "frame": "frame_gray8_4x2"})

text_vector("descriptor", "descriptor", {
    "name": "pcbm", "version": "0.3.1", "accepts": ["GRAY8", "JPEG"],
    "stage_role": "classifier", "max_concurrent": 1})
text_vector("ack_registered", "ack", {"status": "registered"})
text_vector("ack_rejected", "ack", {"status": "rejected", "error": "DuplicateName",
                                    "detail": "engine pcbm is already registered"})
text_vector("reply_ok", "reply", {
    "request_id": 42, "frame_seq": 7, "verdict": "standard_plane", "plane": "head",
    "concepts": [{"name": "skull", "present": True, "score": 0.97},
                 {"name": "midline", "present": True, "score": 0.92}],
    "engine_ms": 31.25, "upstream_seen": False})
text_vector("reply_error", "reply", {
    "request_id": 44, "frame_seq": 9, "verdict": "unknown_plane", "plane": "other",
    "concepts": [], "engine_ms": 0.5, "upstream_seen": False,
    "error": "ValueError: empty mask"})

good_header = compact(header(7, 1_000_000_000, 1_700_000_000_000_000_000, 4, 2, "GRAY8"))
error_vector("bad_magic", "frame", b"LGF2" + gray[4:], "BadMagic")
bad = b"{not json"
error_vector("bad_header", "frame", b"LGF1" + struct.pack(">I", len(bad)) + bad, "HeaderParseError")
error_vector("header_len_overrun", "frame", b"LGF1" + struct.pack(">I", 4096) + good_header,
             "HeaderParseError")
error_vector("short_payload", "frame",
             b"LGF1" + struct.pack(">I", len(good_header)) + good_header + bytes(7),
             "PayloadLengthMismatch")
error_vector("truncated_request", "infer_request", struct.pack(">I", 1) + b"\x00",
             "TruncatedRequest")

with open("index.json", "w") as f:
    json.dump({"version": 1, "vectors": vectors}, f, indent=2)
    f.write("\n")
