from .unet import (NetConfig, NetParams, backward, bce_loss, forward, init_params,
                   load_checkpoint, save_checkpoint)

__all__ = ["NetConfig", "NetParams", "backward", "bce_loss", "forward", "init_params",
           "load_checkpoint", "save_checkpoint"]
