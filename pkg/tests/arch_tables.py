"""Published layer listings of the three networks: (index, kind, input, output, BFLOP).

Shapes are (width, height, channels); None where the listing leaves a cell blank.
"""

VEHICLE_TABLE = [
    (0, 'convolutional', (448, 288, 3), (448, 288, 32), None),
    (1, 'maxpool', (448, 288, 32), (224, 144, 32), None),
    (2, 'convolutional', (224, 144, 32), (224, 144, 64), None),
    (3, 'maxpool', (224, 144, 64), (112, 72, 64), None),
    (4, 'convolutional', (112, 72, 64), (112, 72, 128), None),
    (5, 'convolutional', (112, 72, 128), (112, 72, 64), None),
    (6, 'convolutional', (112, 72, 64), (112, 72, 128), None),
    (7, 'maxpool', (112, 72, 128), (56, 36, 128), None),
    (8, 'convolutional', (56, 36, 128), (56, 36, 256), None),
    (9, 'convolutional', (56, 36, 256), (56, 36, 128), None),
    (10, 'convolutional', (56, 36, 128), (56, 36, 256), None),
    (11, 'maxpool', (56, 36, 256), (28, 18, 256), None),
    (12, 'convolutional', (28, 18, 256), (28, 18, 512), None),
    (13, 'convolutional', (28, 18, 512), (28, 18, 256), None),
    (14, 'convolutional', (28, 18, 256), (28, 18, 512), None),
    (15, 'convolutional', (28, 18, 512), (28, 18, 256), None),
    (16, 'convolutional', (28, 18, 256), (28, 18, 512), None),
    (17, 'maxpool', (28, 18, 512), (14, 9, 512), None),
    (18, 'convolutional', (14, 9, 512), (14, 9, 1024), None),
    (19, 'convolutional', (14, 9, 1024), (14, 9, 512), None),
    (20, 'convolutional', (14, 9, 512), (14, 9, 1024), None),
    (21, 'convolutional', (14, 9, 1024), (14, 9, 512), None),
    (22, 'convolutional', (14, 9, 512), (14, 9, 1024), None),
    (23, 'convolutional', (14, 9, 1024), (14, 9, 1024), None),
    (24, 'convolutional', (14, 9, 1024), (14, 9, 1024), None),
    (25, 'route', None, None, None),
    (26, 'reorg', (28, 18, 512), (14, 9, 2048), None),
    (27, 'route', None, None, None),
    (28, 'convolutional', (14, 9, 3072), (14, 9, 1024), None),
    (29, 'convolutional', (14, 9, 1024), (14, 9, 35), None),
    (30, 'region', None, None, None),
]

LP_TABLE = [
    (0, 'convolutional', (416, 416, 3), (416, 416, 16), 0.15),
    (1, 'maxpool', (416, 416, 16), (208, 208, 16), 0.003),
    (2, 'convolutional', (208, 208, 16), (208, 208, 32), 0.399),
    (3, 'maxpool', (208, 208, 32), (104, 104, 32), 0.001),
    (4, 'convolutional', (104, 104, 32), (104, 104, 64), 0.399),
    (5, 'maxpool', (104, 104, 64), (52, 52, 64), 0.001),
    (6, 'convolutional', (52, 52, 64), (52, 52, 128), 0.399),
    (7, 'maxpool', (52, 52, 128), (26, 26, 128), 0.0),
    (8, 'convolutional', (26, 26, 128), (26, 26, 256), 0.399),
    (9, 'maxpool', (26, 26, 256), (13, 13, 256), 0.0),
    (10, 'convolutional', (13, 13, 256), (13, 13, 512), 0.399),
    (11, 'maxpool', (13, 13, 512), (13, 13, 512), 0.0),
    (12, 'convolutional', (13, 13, 512), (13, 13, 1024), 1.595),
    (13, 'convolutional', (13, 13, 1024), (13, 13, 512), 0.177),
    (14, 'convolutional', (13, 13, 512), (13, 13, 1024), 1.595),
    (15, 'convolutional', (13, 13, 1024), (13, 13, 50), 0.017),
    (16, 'region', None, None, None),
]

OCR_TABLE = [
    (0, 'convolutional', (352, 128, 3), (352, 128, 32), 0.078),
    (1, 'maxpool', (352, 128, 32), (176, 64, 32), 0.001),
    (2, 'convolutional', (176, 64, 32), (176, 64, 64), 0.415),
    (3, 'maxpool', (176, 64, 64), (88, 32, 64), 0.001),
    (4, 'convolutional', (88, 32, 64), (88, 32, 128), 0.415),
    (5, 'convolutional', (88, 32, 128), (88, 32, 64), 0.046),
    (6, 'convolutional', (88, 32, 64), (88, 32, 128), 0.415),
    (7, 'maxpool', (88, 32, 128), (44, 16, 128), 0.0),
    (8, 'convolutional', (44, 16, 128), (44, 16, 256), 0.415),
    (9, 'convolutional', (44, 16, 256), (44, 16, 128), 0.046),
    (10, 'convolutional', (44, 16, 128), (44, 16, 256), 0.415),
    (11, 'convolutional', (44, 16, 256), (44, 16, 512), 1.661),
    (12, 'convolutional', (44, 16, 512), (44, 16, 256), 0.185),
    (13, 'convolutional', (44, 16, 256), (44, 16, 512), 1.661),
    (14, 'convolutional', (44, 16, 512), (44, 16, 200), 0.144),
    (15, 'region', None, None, None),
]

LP_TOTAL_BFLOP = 5.53
