from xmseg.nets.fusion import FUSION_MODES, FusionBlock
from xmseg.nets.heads import HEAD_MODES, DualHead, DualHeadOutput, FusionOutput
from xmseg.nets.model import STREAMS, Net2D, Net3D, XModalModel
from xmseg.nets.net3d import PointVoxelNet
from xmseg.nets.unet2d import UNet2D
