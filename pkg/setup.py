import setuptools

with open("README.md", "r") as fh:
    long_description = fh.read()

setuptools.setup(
    name="exposure_enhancement",
    version="0.0.1",
    description="Underexposed photo and video enhancement via constrained illumination estimation",
    long_description=long_description,
    long_description_content_type="text/markdown",
    packages=["exposure_enhancement", "exposure_enhancement.flow"],
    classifiers=[
        "Programming Language :: Python :: 3",
        "Development Status :: 3 - Alpha",
        "Topic :: Multimedia :: Graphics",
        "Topic :: Scientific/Engineering :: Image Processing",
        "License :: OSI Approved :: GNU General Public License v3 (GPLv3)",
        "Operating System :: OS Independent",
    ],
    python_requires=">=3.9",
    scripts=["bin/enhance", "bin/metrics"],
    install_requires=[
        "PyYAML>=5.3",
        "numpy>=1.22",
        "scipy>=1.12",
        "opencv-python-headless>=4.5",
        "scikit-image>=0.19",
        "numba>=0.56",
    ],
)
