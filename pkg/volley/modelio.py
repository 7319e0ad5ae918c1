"""
Reading and writing of MNIST IDX files and model directories.

A model directory holds:
    conv_k0.csv ... conv_kK.csv   one kh x kw kernel each
    fc1.csv                       hidden x features
    fc2.csv                       classes x hidden
    biases.csv                    three lines: conv, fc1 and fc2 biases
    manifest.cfg                  image size, kernel count, activations
"""

import configparser
import logging
import os
import struct

import numpy as np

from volley import consts, misc
from volley.config import ConfigParser, Serializer
from volley.errors import BadMagic, MissingFile, ParseError, ShapeMismatch, TruncatedFile
from volley.network import CnnModel


logger = logging.getLogger(__name__)

MANIFEST_SECTION = 'model'


def _read_idx(path, magic, dimensions):
    # Data format (big endian):
    # u32    | magic
    # u32[]  | one size per dimension
    # u8[]   | values, row-major
    if not os.path.exists(path):
        raise MissingFile("No such file: %s" % path)
    with open(path, 'rb') as f:
        data = f.read()
    header_size = 4 * (1 + dimensions)
    if len(data) < header_size:
        raise TruncatedFile("%s: %d bytes, the header needs %d" %
                            (path, len(data), header_size))
    found, *shape = struct.unpack('>%dI' % (1 + dimensions), data[:header_size])
    if found != magic:
        raise BadMagic("%s: magic 0x%08x, expected 0x%08x" % (path, found, magic))
    expected = int(np.prod(shape))
    if len(data) - header_size < expected:
        raise TruncatedFile("%s: %d values announced, %d present" %
                            (path, expected, len(data) - header_size))
    return np.frombuffer(data, dtype=np.uint8, count=expected,
                         offset=header_size).reshape(shape)


def load_idx_images(path):
    """(count, rows, cols) pixels scaled to [0, 1]"""
    return _read_idx(path, consts.IDX_IMAGES_MAGIC, 3).astype(np.float64) / 255.0


def load_idx_labels(path):
    return _read_idx(path, consts.IDX_LABELS_MAGIC, 1).astype(np.int64)


def save_idx_images(path, images):
    """Write (count, rows, cols) values in [0, 1] as IDX bytes."""
    images = np.asarray(images, dtype=np.float64)
    if images.ndim != 3:
        raise ShapeMismatch("expected a (count, rows, cols) stack, got shape %s"
                            % (images.shape,))
    pixels = np.clip(np.rint(images * 255.0), 0, 255).astype(np.uint8)
    with open(path, 'wb') as f:
        f.write(struct.pack('>4I', consts.IDX_IMAGES_MAGIC, *images.shape))
        f.write(pixels.tobytes())


def save_idx_labels(path, labels):
    labels = np.asarray(labels, dtype=np.uint8).ravel()
    with open(path, 'wb') as f:
        f.write(struct.pack('>2I', consts.IDX_LABELS_MAGIC, labels.shape[0]))
        f.write(labels.tobytes())


def load_model(dirname):
    manifest = os.path.join(dirname, consts.MODEL_MANIFEST)
    if not os.path.exists(manifest):
        raise MissingFile("No model manifest in %s" % dirname)
    conf = ConfigParser()
    conf.read(manifest)
    try:
        h = conf.getint(MANIFEST_SECTION, 'image_height')
        w = conf.getint(MANIFEST_SECTION, 'image_width')
        kernel_count = conf.getint(MANIFEST_SECTION, 'kernels')
        act1 = conf.getlistfloat(MANIFEST_SECTION, 'act1')
        act2 = conf.getlistfloat(MANIFEST_SECTION, 'act2')
    except (ValueError, configparser.Error) as e:
        raise ParseError("%s: %s" % (manifest, e))

    kernels = [misc.read_matrix_csv(os.path.join(dirname, consts.MODEL_KERNEL % k))
               for k in range(kernel_count)]
    if len(set(k.shape for k in kernels)) > 1:
        raise ShapeMismatch("kernels of %s have different shapes" % dirname)
    fc1 = misc.read_matrix_csv(os.path.join(dirname, consts.MODEL_FC1))
    fc2 = misc.read_matrix_csv(os.path.join(dirname, consts.MODEL_FC2))
    biases = misc.read_ragged_csv(os.path.join(dirname, consts.MODEL_BIASES))
    if len(biases) != 3:
        raise ShapeMismatch("%s needs 3 lines of biases, found %d" %
                            (consts.MODEL_BIASES, len(biases)))

    model = CnnModel(np.stack(kernels), fc1, fc2, conv_biases=biases[0],
                     fc1_biases=biases[1], fc2_biases=biases[2],
                     act1=act1, act2=act2, h=h, w=w)
    if (model.act1, model.act2) != (consts.ACT1_COEFFS, consts.ACT2_COEFFS):
        logger.info("Model %s uses custom activations", dirname)
    return model


def save_model(dirname, model):
    misc.create_dir(dirname)
    for k, kernel in enumerate(model.kernels):
        misc.write_matrix_csv(os.path.join(dirname, consts.MODEL_KERNEL % k),
                              kernel)
    misc.write_matrix_csv(os.path.join(dirname, consts.MODEL_FC1), model.fc1)
    misc.write_matrix_csv(os.path.join(dirname, consts.MODEL_FC2), model.fc2)
    misc.write_ragged_csv(os.path.join(dirname, consts.MODEL_BIASES),
                          [model.conv_biases, model.fc1_biases, model.fc2_biases])

    conf = ConfigParser()
    conf.add_section(MANIFEST_SECTION)
    conf.set(MANIFEST_SECTION, 'image_height', str(model.h))
    conf.set(MANIFEST_SECTION, 'image_width', str(model.w))
    conf.set(MANIFEST_SECTION, 'kernels', str(model.kernel_count))
    conf.set(MANIFEST_SECTION, 'act1', Serializer.listfloat(model.act1))
    conf.set(MANIFEST_SECTION, 'act2', Serializer.listfloat(model.act2))
    with open(os.path.join(dirname, consts.MODEL_MANIFEST), 'w',
              encoding="utf-8") as f:
        conf.write(f)
