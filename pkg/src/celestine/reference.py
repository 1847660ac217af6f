"""Published HR-CelestialNet figures used for side-by-side comparison output.

None of these values feed a computation; they are what ``analyze``,
``eval`` and ``bench`` print next to their own results.
"""

# Architecture table: row -> (type, kernel, stride, output shape, trainable params).
# Params exclude the BatchNorm layers that follow each convolution.
TABLE2 = {
    1: ("Convolution", 7, 1, (32, 2042, 4090), 1_600),
    2: ("Max Pooling", 8, 4, (32, 509, 1021), 0),
    3: ("Convolution", 7, 1, (64, 503, 1015), 100_416),
    4: ("Max Pooling", 4, 2, (64, 250, 506), 0),
    5: ("Convolution", 5, 1, (128, 246, 502), 204_928),
    6: ("Convolution", 5, 1, (128, 242, 498), 409_728),
    7: ("Max Pooling", 2, 2, (128, 121, 248), 0),
    8: ("Convolution", 3, 1, (256, 119, 247), 295_168),
    9: ("Convolution", 3, 1, (256, 117, 245), 590_080),
    10: ("Max Pooling", 2, 2, (256, 58, 122), 0),
    11: ("Convolution", 3, 1, (256, 56, 120), 590_080),
    12: ("Convolution", 3, 1, (256, 54, 118), 590_080),
    13: ("Max Pooling", 2, 2, (256, 27, 59), 0),
    14: ("Convolution", 3, 1, (512, 25, 57), 1_180_160),
    15: ("Convolution", 3, 1, (512, 23, 55), 2_359_808),
    16: ("Max Pooling", 2, 2, (512, 11, 27), 0),
    17: ("Convolution", 3, 1, (512, 9, 25), 2_359_808),
    18: ("Convolution", 3, 1, (512, 7, 23), 2_359_808),
    19: ("Max Pooling", 2, 2, (512, 3, 11), 0),
    20: ("Fully Connected", None, None, (4096,), 69_210_112),
    21: ("Fully Connected", None, None, (4096,), 16_781_312),
    22: ("Output", None, None, (2,), 8_194),
}

# Row 7's printed width (248) contradicts rows 6 and 8, which force 249.
TABLE2_ERRATA = {7: "printed 128x121x248; rows 6 and 8 force width (498-2)//2+1 = 249"}

# Hardware table entry for HR-CelestialNet on full-size inputs, batch 4.
TABLE3_HR = {"image_size": (2048, 4096), "input_mb": 128.0, "model_mb": 370.21,
             "estimated_total_gb": 32.79}
TABLE3_RESIZE_INPUT_MB = 1.53  # 224x448 input, batch 4

# Headline metrics and per-sample timing (ms) for HR-CelestialNet on LCID.
# Obtained on the full HST dataset and the authors' hardware; reference only.
TABLE4_HR = {"accuracy": 0.8909, "f1_galaxy": 0.9020, "f1_nsc": 0.8769,
             "preprocessing_ms": 60.6, "classification_ms": 55.9, "total_ms": 116.5}
LCID_RESIZE_PREPROCESSING_MS = 120.6

# Confusion matrices on the 116-sample blurry validation set as (TP, FP, FN, TN),
# galaxy positive, with the reported accuracies. VGGNet's cells follow the
# narrative counts (24 NSC and 1 galaxy misclassified); 91/116 = 78.45%.
BLURRY_CONFUSION = {
    "HR-CelestialNet": ((72, 17, 1, 26), 0.8448),
    "VGGNet": ((72, 24, 1, 19), 0.7845),
    "AlexNet": ((69, 24, 4, 19), 0.7586),
    "ResNet": ((55, 11, 18, 32), 0.7500),
}

# Adaptive-average-pool output sizes used when fitting the baselines to 2048x4096 inputs.
AAPL_TARGETS = {"AlexNet": (6, 13), "VGGNet": (7, 14), "ResNet": (1, 2)}

REFERENCE_ONLY_NOTE = (
    "reference only: published values come from the full 7,813-image HST dataset and "
    "the authors' hardware; they are not reproducible at desk scale"
)
