"""Writes the 20-record end-to-end fixture: images, manifest, mock script and
external face boxes. Rerunning it reproduces the committed files."""
import json
import os

import cv2
import numpy as np

HERE = os.path.dirname(os.path.abspath(__file__))


def elena(label, explicit, implicit, narrative, parts, vad=None):
    doc = {"label": label, "explicit": explicit, "implicit": implicit,
           "narrative": narrative, "body_parts": parts}
    if vad:
        doc["valence"], doc["arousal"], doc["dominance"] = vad
    return json.dumps(doc)


# record_id, EMOTIC gold labels, person box, mock script entry
RECORDS = [
    ("r01", ["Happiness"], None,
     elena("Happiness", "Arms raised high, hands open.", "Quick light breathing.",
           "A runner crosses the finish line with arms up.", ["arms", "hands", "breathing"], (8, 7, 6))),
    ("r02", ["Pleasure", "Affection"], None,
     "```json\n" + elena("Happiness", "Shoulders relaxed, leaning in.", "A warm chest.",
                         "Two friends share a hug.", ["shoulders", "chest"]) + "\n```"),
    ("r03", ["Sadness"], None,
     "Here is my analysis.\n" + elena("Sadness", "Head bowed, shoulders slumped.", "Heavy heart.",
                                      "A man sits alone on a bench.", ["head", "shoulders", "heart"], (2, 3, 3))
     + "\nLet me know if you need more."),
    ("r04", ["Fatigue"], None,
     elena("Neutral", "Arms resting on the desk.", "Slow breathing.",
           "A student waits for class.", ["arms", "breathing"])),
    ("r05", ["Anger"], None,
     '{"label": "Anger", "explicit": "Fists clenched, jaw set.", "implicit": "Pounding heartbeat.", '
     '"narrative": "A driver shouts at traffic.", "body_parts": ["fists", "jaw", "heartbeat"],}'),
    ("r06", ["Annoyance"], None,
     elena("Disgust", "Hand pushing a plate away.", "A tight stomach.",
           "A diner rejects a meal.", ["hand", "stomach"])),
    ("r07", ["Aversion"], None,
     "I'm sorry, but I can't help with that request."),
    ("r08", ["Fear"], None,
     elena("Fear", "Arms wrapped around the torso, knees drawn up.", "Racing pulse.",
           "A child hides during a storm.", ["arms", "torso", "knees", "pulse"])),
    ("r09", ["Disquietment"], None,
     elena("Surprise", "Hands lifted, eyes wide.", "A sharp breath.",
           "Someone jumps at a loud noise.", ["hands", "eyes", "breath"])),
    ("r10", ["Surprise"], None,
     elena("Surprise", "Mouth open, hands on cheeks.", "A skipped heartbeat.",
           "A guest walks into a surprise party.", ["mouth", "hands", "heartbeat"])),
    ("r11", ["Peace"], None,
     elena("Neutral", "Legs crossed, hands folded.", "Even breathing.",
           "A woman reads in a park.", ["legs", "hands", "breathing"])),
    ("r12", ["Disapproval"], None,
     '{"label": "Disgust", "explicit": "Nose wrinkled and'),
    ("r13", ["Doubt/Confusion"], None,
     elena("Neutral", "Head tilted, finger on chin.", "Nothing notable.",
           "A shopper compares two labels.", ["head", "finger"])),
    ("r14", ["Excitement", "Anticipation"], None,
     elena("happy", "Jumping with both feet off the ground.", "Racing heart.",
           "A fan celebrates a goal.", ["feet", "heart", "whole body"])),
    ("r15", ["Pain", "Suffering", "Anger"], None,
     {"fail_first": ["RateLimited", "Timeout"],
      "text": elena("Sadness", "Hand pressed to the back.", "Aching muscles.",
                    "A worker rests after lifting boxes.", ["hand", "back", "muscles"])}),
    ("r16", ["Esteem"], None,
     elena("Happiness", "Chest out, chin up.", "Steady breathing.",
           "A graduate poses for a photo.", ["chest", "chin", "breathing"])),
    ("r17", ["Engagement"], None,
     elena("Happiness", "Leaning forward, hands gesturing.", "Energized.",
           "A speaker engages the audience.", ["hands", "posture"])),
    ("r18", ["Yearning"], None,
     elena("Sadness", "Hand on the window, shoulders low.", "A hollow stomach.",
           "Someone watches a train leave.", ["hand", "shoulders", "stomach"], (3, 4, 2))),
    ("r19", ["Fear"], {"x": 2, "y": 2, "w": 40, "h": 44},
     elena("Fear", "Arms raised to shield the head.", "Shallow breathing.",
           "A hiker faces a bear.", ["arms", "head", "breathing"])),
    ("r20", ["Happiness"], {"x": 30, "y": 30, "w": 16, "h": 16},
     elena("Happiness", "Arms around a friend.", "Light chest.",
           "A child laughs in the background.", ["arms", "chest"])),
]

# Face boxes for the masked condition, keyed by record.
BOXES = {
    "r01": [{"x": 16, "y": 4, "w": 14, "h": 14, "confidence": 0.93}],
    "r03": [{"x": 10, "y": 8, "w": 12, "h": 12, "confidence": 0.88}],
    "r19": [{"x": 14, "y": 4, "w": 14, "h": 14, "confidence": 0.91}],
    "r20": [{"x": 14, "y": 4, "w": 14, "h": 14, "confidence": 0.91}],
}


def main():
    img_dir = os.path.join(HERE, "images")
    os.makedirs(img_dir, exist_ok=True)
    box_dir = os.path.join(HERE, "boxes")
    os.makedirs(box_dir, exist_ok=True)
    manifest, script = [], {}
    for i, (rid, gold, box, response) in enumerate(RECORDS):
        image_name = "img19.png" if rid == "r20" else "img%02d.png" % (i + 1)
        path = os.path.join(img_dir, image_name)
        if not os.path.exists(path) or rid != "r20":
            img = np.zeros((48, 48, 3), np.uint8)
            img[:, :] = ((i * 37) % 256, (i * 91) % 256, (i * 53) % 256)
            img[8:40, 12:36] = (200, 180, 160)
            cv2.imwrite(path, img, [cv2.IMWRITE_PNG_COMPRESSION, 6])
        rec = {"record_id": rid, "image_ref": "images/" + image_name, "gold_labels": gold,
               "source_taxonomy": "EMOTIC"}
        if box:
            rec["person_box"] = box
        manifest.append(rec)
        script[rid] = response
    with open(os.path.join(HERE, "manifest.jsonl"), "w") as f:
        for rec in manifest:
            f.write(json.dumps(rec) + "\n")
    with open(os.path.join(HERE, "mock_script.json"), "w") as f:
        json.dump(script, f, indent=2, sort_keys=True)
        f.write("\n")
    for rid, faces in BOXES.items():
        with open(os.path.join(box_dir, rid + ".json"), "w") as f:
            json.dump({"image_id": rid, "faces": faces}, f, indent=2)
            f.write("\n")


if __name__ == "__main__":
    main()
